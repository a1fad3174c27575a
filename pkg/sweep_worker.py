"""
Background execution of independent evolutions.

A sweep is a list of (config, initial field or None) jobs.  Jobs run on a
process pool; results come back in input order whatever the completion order.
"""

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed

from flow import evolve

logger = logging.getLogger(__name__)


def _run_job(cfg, initial):
    started = time.perf_counter()
    trace = evolve(cfg, initial=initial)
    return trace, time.perf_counter() - started


class SweepWorker:
    """
    Evolves every job of a sweep.

    Args:
        jobs: sequence of (ExperimentConfig, Field or None)
        max_workers: pool size; 1 runs the jobs in this process
    """

    def __init__(self, jobs, max_workers=None):
        self.jobs = list(jobs)
        self.max_workers = max_workers

    def _workers(self):
        if self.max_workers is not None:
            return max(1, int(self.max_workers))
        return max(1, min(len(self.jobs), os.cpu_count() or 1))

    def run(self, progress_callback=None):
        """Return a list of (FlowTrace, runtime in seconds) in job order."""
        results = [None] * len(self.jobs)
        total = len(self.jobs)
        workers = self._workers()
        logger.info("Running %d evolutions on %d worker(s)", total, workers)

        if workers == 1 or total <= 1:
            for i, (cfg, initial) in enumerate(self.jobs):
                results[i] = _run_job(cfg, initial)
                if progress_callback:
                    progress_callback(int(100 * (i + 1) / total))
            return results

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_run_job, cfg, initial): i for i, (cfg, initial) in enumerate(self.jobs)}
            done = 0
            for future in as_completed(futures):
                i = futures[future]
                try:
                    results[i] = future.result()
                except Exception as e:
                    logger.error("Sweep job %d (eps=%s) failed: %s", i, self.jobs[i][0].eps, str(e))
                    raise
                done += 1
                if progress_callback:
                    progress_callback(int(100 * done / total))
        return results
