# Report documents and the files that go with them.
#
# Report bodies are hash-stable: keys are sorted and nothing
# time-dependent goes into them. Wall-clock numbers live in a separate
# '<name>.timings.json' next to each report.

__metaclass__ = type
"""
ExperimentReport and writers for JSON, CSV tables and matrices.
"""

import csv
import json
import logging
import time

import numpy as np

from nonneg_cl.module_utils.config import config_hash
from nonneg_cl.module_utils.metrics import MetricFragment, to_plain

log = logging.getLogger(__name__)

REPORT_FORMAT = 1


def dumps(obj):
    return json.dumps(to_plain(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    with open(path, 'w') as f:
        f.write(dumps(obj))


def write_matrix(path, array):
    """Headerless CSV, full double precision."""
    np.savetxt(path, np.atleast_2d(np.asarray(array, dtype=np.float64)),
               fmt='%.17g', delimiter=',')


def write_table(path, header, rows):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in row])


class ExperimentReport:
    """Config echo, content hash, metric fragments, theorem rows and
    whatever else a subcommand wants to record."""

    def __init__(self, subcommand, params):
        self.subcommand = subcommand
        self.params = params
        self.metrics = {}
        self.theorems = []
        self.extra = {}
        self.outputs = []
        self.timings = {}
        self._started = time.time()
        self._phase = None

    def add_metric(self, fragment):
        if not isinstance(fragment, MetricFragment):
            raise TypeError(f"not a MetricFragment: {fragment!r}")
        if fragment.name in self.metrics:
            raise ValueError(f"metric {fragment.name} reported twice")
        self.metrics[fragment.name] = fragment

    def add_theorems(self, checks):
        self.theorems.extend(checks)

    def phase(self, name):
        """Start timing a named phase; the previous one ends."""
        now = time.perf_counter()
        if self._phase is not None:
            prev, started = self._phase
            self.timings[prev] = now - started
        self._phase = (name, now) if name is not None else None

    def to_json(self, warnings=()):
        doc = {
            'format': REPORT_FORMAT,
            'subcommand': self.subcommand,
            'config': self.params,
            'config_hash': config_hash(to_plain(self.params)),
            'metrics': [self.metrics[name].to_json()
                        for name in sorted(self.metrics)],
            'outputs': sorted(self.outputs),
            'warnings': list(warnings),
        }
        if self.theorems:
            doc['theorems'] = [c.to_json() for c in self.theorems]
            doc['passed'] = all(c.passed for c in self.theorems)
        doc.update(self.extra)
        return doc

    def timings_json(self):
        self.phase(None)
        return {
            'started': self._started,
            'finished': time.time(),
            'phases_s': dict(self.timings),
        }

    def write(self, module, name):
        """Write '<name>.json' and '<name>.timings.json'. In check mode
        only report what would be written."""

        body = self.to_json(module.warnings)
        path = module.output_path(f'{name}.json')
        timings = module.output_path(f'{name}.timings.json')
        if module.check_mode:
            return [path, timings]
        write_json(path, body)
        write_json(timings, self.timings_json())
        log.info("wrote report %s", path)
        return [path, timings]

    def output(self, module, name):
        """Register an output file and return its path."""
        self.outputs.append(name)
        return module.output_path(name)
