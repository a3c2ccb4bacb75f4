import json
import subprocess
import sys

import numpy as np
import pytest

from qgosim import executions, qcore, verifier
from qgosim.harness import traceio
from qgosim.harness.scenarios import (
    BASE_ALGORITHMS,
    ScenarioConfig,
    build_scenario,
    correction_unitary,
    bell_measurement,
)
from qgosim.harness.scheduler import SchedulerError, run_simulation


class TestScenarios:
    def test_token_ring_terminates_with_hops(self):
        cfg = ScenarioConfig(base="token-ring", procs=3,
                             base_params={"max_hops": 4}, seed=0)
        res = run_simulation(cfg)
        holders = [p for p in res.final_state.procs
                   if res.final_state.classical[p]["has_token"]]
        assert len(holders) == 1
        assert res.final_state.classical[holders[0]]["hops"] == 4
        # 4 hops on a 3-ring: the token ends one past its start
        assert holders[0] == "p1"

    def test_teleport_transfers_the_data_state(self):
        # the receiver ends up with the data qubit regardless of the
        # sampled Bell outcome
        for seed in range(8):
            cfg = ScenarioConfig(base="teleport", procs=2, seed=seed)
            res = run_simulation(cfg)
            st = res.final_state
            assert st.classical["p0"]["phase"] == "done"
            assert st.classical["p1"]["phase"] == "done"
            (reg,) = st.owned_by("p1")
            others = [r for r in st.quantum.space.registers if r != reg]
            reduced = qcore.partial_trace(st.quantum, others)
            rho = reduced.entries / reduced.entries.trace()
            psi = np.array([0.6, 0.8j])
            assert np.allclose(rho, np.outer(psi, psi.conj()), atol=1e-9)

    def test_bell_measurement_is_valid_operation(self):
        assert qcore.validate_operation(bell_measurement()).valid

    def test_correction_unitaries(self):
        # teleporting |b> with Bell outcome ab needs X^b then Z^a
        for bits in ("00", "01", "10", "11"):
            u = correction_unitary(bits)
            assert np.allclose(u @ u.conj().T, np.eye(2))

    def test_empty_algorithm_quiesces_immediately(self):
        cfg = ScenarioConfig(base="empty", procs=2,
                             base_params={"qubits_per_proc": 1}, seed=0)
        res = run_simulation(cfg)
        assert res.execution.events == ()

    def test_scheduled_invocation_runs_even_without_base_activity(self):
        cfg = ScenarioConfig(
            base="empty", procs=2, base_params={"qubits_per_proc": 1},
            invocations=[{"gid": "snapshot-measure", "leader": "p0",
                          "after_step": 10}],
            seed=0,
        )
        res = run_simulation(cfg)
        assert any(isinstance(e, executions.Invoke) for e in res.execution.events)
        assert verifier.verify(res.execution).accepted


class TestScheduler:
    def cfg(self, **kw):
        base = dict(base="token-ring", procs=2,
                    base_params={"max_hops": 3, "epr_pair": True},
                    invocations=[{"gid": "record-only", "leader": "p0",
                                  "after_step": 2}],
                    seed=12)
        base.update(kw)
        return ScenarioConfig(**base)

    def test_same_seed_same_run(self):
        a = run_simulation(self.cfg())
        b = run_simulation(self.cfg())
        t1 = traceio.serialize_run(a.execution, a.config, a.decisions)
        t2 = traceio.serialize_run(b.execution, b.config, b.decisions)
        assert t1 == t2

    def test_different_seeds_diverge(self):
        a = run_simulation(self.cfg(seed=1))
        b = run_simulation(self.cfg(seed=2))
        assert a.decisions != b.decisions

    def test_all_policies_verify(self):
        for policy in ("uniform-random", "round-robin", "channel-delay-biased"):
            res = run_simulation(self.cfg(policy=policy))
            assert verifier.verify(res.execution).accepted, policy

    def test_replay_policy_reproduces_run(self):
        res = run_simulation(self.cfg())
        cfg = self.cfg(policy="replay")
        again = run_simulation(cfg, res.decisions)
        assert [e.eid for e in again.execution.events] == \
            [e.eid for e in res.execution.events]

    def test_replay_rejects_bad_script(self):
        cfg = self.cfg(policy="replay")
        with pytest.raises(SchedulerError):
            run_simulation(cfg, [["recv", "p0->p1"]])

    def test_unknown_policy(self):
        with pytest.raises(SchedulerError):
            run_simulation(self.cfg(policy="lifo"))


class TestTraceIO:
    def any_run(self, seed=0, gid="snapshot-measure"):
        cfg = ScenarioConfig(
            base="teleport", procs=2,
            invocations=[{"gid": gid, "leader": "p1", "after_step": 1}],
            seed=seed,
        )
        return run_simulation(cfg)

    def test_roundtrip_is_byte_identical(self):
        res = self.any_run()
        text = traceio.serialize_run(res.execution, res.config, res.decisions)
        x, cfg, dec = traceio.parse_run(text)
        assert traceio.serialize_run(x, cfg, dec) == text

    def test_roundtrip_replays_identically(self):
        res = self.any_run(seed=3, gid="global-encrypt")
        text = traceio.serialize_run(res.execution, res.config, res.decisions)
        x, _, _ = traceio.parse_run(text)
        a = executions.replay(res.execution)[-1]
        b = executions.replay(x)[-1]
        from qgosim import sysmodel
        assert sysmodel.states_identical(a, b)

    def test_malformed_trace_rejected(self):
        with pytest.raises(traceio.TraceError):
            traceio.parse_run("not json\n")
        with pytest.raises(traceio.TraceError):
            traceio.parse_run('{"t": "ev", "k": "invoke"}\n')  # no header

    def test_certificate_serializes(self):
        res = self.any_run()
        cert = verifier.verify(res.execution)
        text = traceio.serialize_certificate(cert)
        head = json.loads(text.splitlines()[0])
        assert head["accepted"] is True
        assert head["verdicts"]["spec-replay"] is True


class TestCli:
    def run_cli(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "qgosim.harness.cli", *args],
            capture_output=True, text=True,
        )

    def test_run_verify_exit_codes(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "base": "token-ring", "procs": 2,
            "base_params": {"max_hops": 3, "epr_pair": True},
            "invocations": [{"gid": "snapshot-measure", "leader": "p0",
                             "after_step": 2}],
            "seed": 3,
        }))
        trace = tmp_path / "t.jsonl"
        r = self.run_cli("run", "--config", str(cfg), "--out", str(trace))
        assert r.returncode == 0, r.stderr
        r = self.run_cli("verify", str(trace))
        assert r.returncode == 0
        assert "accepted" in r.stdout

    def test_verify_rejects_tampered_trace(self, tmp_path):
        cfg = ScenarioConfig(
            base="ping", procs=2, base_params={"n_msgs": 1},
            invocations=[{"gid": "record-only", "leader": "p0", "after_step": 1}],
            seed=0,
        )
        res = run_simulation(cfg)
        drop = next(e for e in res.execution.events
                    if isinstance(e, executions.Send) and e.protocol)
        bad = executions.Execution(
            res.execution.initial,
            tuple(e for e in res.execution.events if e is not drop),
        )
        trace = tmp_path / "bad.jsonl"
        trace.write_text(traceio.serialize_run(bad, cfg, None))
        r = self.run_cli("verify", str(trace))
        assert r.returncode == 1

    def test_bad_input_exit_code(self, tmp_path):
        junk = tmp_path / "junk.jsonl"
        junk.write_text("definitely not a trace\n")
        assert self.run_cli("verify", str(junk)).returncode == 2
        assert self.run_cli("run", "--config", "/no/such/file").returncode == 2

    def test_inspect_and_batch(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "base": "ping", "procs": 2, "base_params": {"n_msgs": 1},
            "invocations": [{"gid": "record-only", "leader": "p0",
                             "after_step": 1}],
        }))
        trace = tmp_path / "t.jsonl"
        assert self.run_cli("run", "--config", str(cfg), "--out",
                            str(trace)).returncode == 0
        r = self.run_cli("inspect", str(trace), "--causality")
        assert r.returncode == 0 and "events" in r.stdout
        r = self.run_cli("batch", "--config", str(cfg), "--seeds", "0:4")
        assert r.returncode == 0
        assert "4/4 accepted" in r.stdout
