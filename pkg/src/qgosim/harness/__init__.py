"""Scenario library, scheduler, trace serialization, and the command line."""
