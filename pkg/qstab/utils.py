from base64 import b32encode
from concurrent.futures import ThreadPoolExecutor, wait, FIRST_COMPLETED
import itertools
import json
import logging
import os
import sys
import traceback
import typing as ty
from hashlib import sha1
from collections.abc import Mapping

import numpy as np

if any("jupyter" in arg for arg in sys.argv):
    # In some cases we are not using any notebooks,
    # Taken from 44952863 on stack overflow thanks!
    from tqdm.notebook import tqdm
else:
    from tqdm import tqdm  # type: ignore


def exporter(export_self=False):
    """Export utility modified from https://stackoverflow.com/a/41895194
    Returns export decorator, __all__ list
    """
    all_ = []
    if export_self:
        all_.append("exporter")

    def decorator(obj):
        all_.append(obj.__name__)
        return obj

    return decorator, all_


export, __all__ = exporter(export_self=True)
__all__.extend(["tqdm", "MAX_WORKERS_ENV"])

# Environment variable overriding the number of worker threads
MAX_WORKERS_ENV = "QSTAB_MAX_WORKERS"


@export
def hashablize(obj):
    """Convert a container hierarchy into one that can be hashed.

    See http://stackoverflow.com/questions/985294

    """
    if isinstance(obj, Mapping):
        # Convert immutabledict etc for json decoding
        obj = dict(obj)
    try:
        hash(obj)
    except TypeError:
        if isinstance(obj, dict):
            return tuple((k, hashablize(v)) for (k, v) in sorted(obj.items()))
        elif isinstance(obj, np.ndarray):
            return hashablize(obj.tolist())
        elif hasattr(obj, "__iter__"):
            return tuple(hashablize(o) for o in obj)
        else:
            raise TypeError("Can't hashablize object of type %r" % type(obj))
    else:
        if isinstance(obj, complex):
            return (obj.real, obj.imag)
        return obj


@export
class NumpyJSONEncoder(json.JSONEncoder):
    """Special json encoder for numpy types
    Edited from mpl3d: mpld3/_display.py

    Complex numbers are written as [real, imag] pairs.
    """

    def default(self, obj):
        if isinstance(obj, (int, float, str, bool)) or obj is None:
            return obj
        if isinstance(obj, (complex, np.complexfloating)):
            return [float(obj.real), float(obj.imag)]
        if isinstance(obj, np.bool_):
            return bool(obj)
        if isinstance(obj, np.integer):
            return int(obj)
        elif isinstance(obj, np.floating):
            return float(obj)
        try:
            iterable = iter(obj)
        except TypeError:
            pass
        else:
            return [self.default(item) for item in iterable]
        return json.JSONEncoder.default(self, obj)


@export
def deterministic_hash(thing, length=10):
    """Return a base32 lowercase string of length determined from hashing a container hierarchy."""
    hashable = hashablize(thing)
    jsonned = json.dumps(hashable, cls=NumpyJSONEncoder)
    digest = sha1(jsonned.encode("ascii")).digest()
    return b32encode(digest)[:length].decode("ascii").lower()


@export
def derive_seed(root_seed: int, *names) -> int:
    """Split root_seed into an independent named stream seed.

    The same (root_seed, names) always gives the same 63-bit integer, so e.g.
    derive_seed(7, "sme-noise", 3) is the noise seed of trajectory 3 of a run seeded with 7.

    """
    jsonned = json.dumps(hashablize([int(root_seed), list(names)]), cls=NumpyJSONEncoder)
    digest = sha1(jsonned.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


@export
def formatted_exception():
    """Return human-readable multiline string with info about the exception that is currently being
    handled.

    If no exception, or StopIteration, is being handled, returns an empty string.

    """
    exc_info = sys.exc_info()
    if exc_info[0] in [None, StopIteration]:
        # There was no relevant exception to record
        return ""
    return traceback.format_exc()


@export
def to_numpy_dtype(field_spec):
    if isinstance(field_spec, np.dtype):
        return field_spec

    dtype = []
    for x in field_spec:
        if len(x) == 3:
            if isinstance(x[0], tuple):
                # Numpy syntax for array field
                dtype.append(x)
            else:
                # Lazy syntax for normal field
                field_name, field_type, comment = x
                dtype.append(((comment, field_name), field_type))
        elif len(x) == 2:
            # (field_name, type)
            dtype.append(x)
        elif len(x) == 1:
            # Omitted type: assume float
            dtype.append((x, float))
        else:
            raise ValueError(f"Invalid field definition {x}")
    return np.dtype(dtype)


@export
def resolve_max_workers(max_workers=None) -> int:
    """Return the number of worker threads to use.

    The QSTAB_MAX_WORKERS environment variable wins over the argument, None means 1.

    """
    from_env = os.environ.get(MAX_WORKERS_ENV)
    if from_env:
        try:
            max_workers = int(from_env)
        except ValueError:
            raise ValueError(f"{MAX_WORKERS_ENV} must be an integer, got {from_env!r}")
    if max_workers is None:
        max_workers = 1
    if max_workers < 1:
        raise ValueError(f"Need at least one worker, got {max_workers}")
    return max_workers


@export
def run_parallel(
    exec_function,
    tasks,
    *args,
    max_workers=None,
    progress_bar=True,
    desc=None,
    log=None,
    **kwargs,
):
    """Execute exec_function(task, *args, **kwargs) for every task, return the results in task
    order.

    :param exec_function: Function to run
    :param tasks: sequence of task arguments
    :param max_workers: number of worker threads to spawn. If None, defaults to 1 (or the
        QSTAB_MAX_WORKERS environment variable).
    :param progress_bar: show a tqdm progressbar over the tasks.
    :param desc: description shown on the progress bar.
    :param log: logger to be used. Other (kw)args will be passed to the exec_function.

    """
    max_workers = resolve_max_workers(max_workers)
    if log is None:
        log = logging.getLogger("qstab.run_parallel")
    tasks = list(tasks)
    results: ty.List[ty.Any] = [None] * len(tasks)

    pbar = tqdm(
        total=len(tasks),
        desc=desc or "Running %d tasks" % len(tasks),
        disable=not progress_bar,
    )
    if max_workers == 1:
        # No threads
        for i, task in enumerate(tasks):
            results[i] = exec_function(task, *args, **kwargs)
            pbar.update(1)
        pbar.close()
        return results

    # Only schedule twice as many tasks as there are workers, so
    # memory does not scale with the number of tasks
    how_many_tasks_at_once = max_workers * 2
    indexed = list(enumerate(tasks))
    with ThreadPoolExecutor(max_workers=max_workers) as exc:
        log.debug(f"Starting ThreadPoolExecutor with {max_workers} workers.")
        futures = {
            exc.submit(exec_function, task, *args, **kwargs): i
            for i, task in itertools.islice(indexed, 0, how_many_tasks_at_once)
        }
        task_index = how_many_tasks_at_once
        while futures:
            futures_done, _ = wait(futures, return_when=FIRST_COMPLETED)
            for f in futures_done:
                i = futures.pop(f)
                pbar.update(1)
                if f.exception() is not None:
                    pbar.close()
                    raise f.exception()
                results[i] = f.result()

            for i, task in itertools.islice(indexed, task_index, task_index + len(futures_done)):
                task_index += 1
                futures[exc.submit(exec_function, task, *args, **kwargs)] = i
            log.debug(f"{len(tasks) - task_index} tasks left to submit")
    pbar.close()
    return results
