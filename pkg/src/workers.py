"""Fan work out over ray workers, or run it in-process for a single thread."""

import logging

logger = logging.getLogger(__name__)


def _apply(fn, item):
    return fn(item)


def parallel_map(fn, items, threads=1) -> list:
    """Apply `fn` to each item, preserving input order in the result.

    :param fn: A picklable callable taking one item (functions and partials both work).
    :param items: The items to process.
    :param threads: Worker cap; values <= 1 keep everything in the calling process.
    :return: A list of results, one per item, in input order.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    import ray

    if not ray.is_initialized():
        logger.debug('starting ray with %d cpus', threads)
        ray.init(num_cpus=threads, include_dashboard=False, log_to_driver=False, ignore_reinit_error=True)
    remote_apply = ray.remote(_apply)
    fn_ref = ray.put(fn)
    return ray.get([remote_apply.remote(fn_ref, item) for item in items])
