import textwrap

import pytest

from cpsfog.config import load_config
from cpsfog.engine import Engine
from cpsfog.network import Device, NetworkModel
from cpsfog.security import SecurityManager
from cpsfog.simulation import Simulation
from cpsfog.trace import MemoryTrace


def scenario(text: str):
    return load_config(textwrap.dedent(text))


def run_sim(text_or_cfg, **features):
    """Run a scenario in memory; returns (sim, trace, truth)."""
    cfg = scenario(text_or_cfg) if isinstance(text_or_cfg, str) else text_or_cfg
    if features:
        cfg = cfg.with_features(**features)
    trace, truth = MemoryTrace(), MemoryTrace()
    sim = Simulation(cfg, trace, truth)
    sim.run()
    return sim, trace, truth


class Bench:
    """A network plus security manager without the rest of the simulation."""

    def __init__(self, techs=("NB-IoT", "eMTC"), cells=("c0", "c1"), **sec):
        self.engine = Engine()
        self.engine.on("aka_invoke", lambda ev: None)
        self.net = NetworkModel(self.engine)
        for c in cells:
            self.net.add_cell(c, f"enb-{c}", list(techs))
        self.trace = MemoryTrace()
        self.trace.bind(self.engine)
        self.sec = SecurityManager(self.net, seed=1, trace=self.trace, **sec)

    def device(self, dev_id="d0", tech="eMTC", cell="c0", domain="SmartGrid", rogue=False, **kw):
        dev = Device(dev_id, domain, self.net.techs[tech], "I" + dev_id, **kw)
        self.net.add_device(dev)
        self.sec.provision(dev, rogue=rogue)
        if cell is not None:
            self.net.attach_device(dev, cell)
        return dev


@pytest.fixture
def bench():
    return Bench()


# -- acceptance summary -------------------------------------------------------

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n, title = mark.args
    row = _criteria.setdefault(n, {"title": title, "ok": True, "details": []})
    row["ok"] = row["ok"] and rep.passed
    row["details"] += [v for k, v in item.user_properties if k == "detail" and v not in row["details"]]
    if not rep.passed and rep.when != "call":
        row["details"].append(f"{rep.when} error")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_criteria):
        row = _criteria[n]
        tr.write_line(f"criterion {n:2d} {'PASS' if row['ok'] else 'FAIL'}  {row['title']}: "
                      f"{'; '.join(row['details'])}")
