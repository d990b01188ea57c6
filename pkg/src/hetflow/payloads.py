"""Registries for function and program payloads.

Task payloads name a registered function (plus structured arguments) or a
registered local program; nothing is ever deserialized from the workflow
file into code.  Multi-rank functions receive a rank context exposing the
group collectives.
"""

from __future__ import annotations

import time

FUNCTIONS: dict = {}
PROGRAMS: dict = {}


def function_payload(name: str):
    def deco(fn):
        FUNCTIONS[name] = fn
        return fn
    return deco


def program_payload(name: str):
    def deco(fn):
        PROGRAMS[name] = fn
        return fn
    return deco


def lookup_function(name: str):
    if name not in FUNCTIONS:
        raise KeyError(name)
    return FUNCTIONS[name]


def lookup_program(name: str):
    if name not in PROGRAMS:
        raise KeyError(name)
    return PROGRAMS[name]


class SoloContext:
    """Rank context for single-rank execution: collectives are identities."""

    rank = 0
    size = 1

    def barrier(self) -> None:
        return None

    def broadcast(self, value=None):
        return value

    def gather(self, value):
        return [value]


# -- built-in payloads ----------------------------------------------------


@function_payload("noop")
def noop(ctx, *args):
    return None


@function_payload("echo")
def echo(ctx, *args):
    return list(args)


@function_payload("raise_error")
def raise_error(ctx, *args):
    raise RuntimeError("raise_error payload raised")


@function_payload("sleep_ms")
def sleep_ms(ctx, ms=1):
    time.sleep(ms / 1000.0)
    return ms


@function_payload("pre_process")
def pre_process(ctx, triple_id=0):
    # Stages the environment marker a downstream run step picks up.
    return {"triple": triple_id, "env": "ready"}


@function_payload("post_process")
def post_process(ctx, triple_id=0):
    return {"triple": triple_id, "collected": True}


@function_payload("rank_sum")
def rank_sum(ctx, *args):
    parts = ctx.gather(ctx.rank)
    if ctx.rank == 0:
        return sum(parts)
    return None


@function_payload("tile_and_infer")
def tile_and_infer(ctx, tiles_per_rank=4):
    """Two-phase SPMD payload: CPU-tagged tiling, then GPU-tagged inference.

    All ranks tile their share, synchronize, then run the inference phase;
    rank 0 gathers the per-rank tile counts.
    """
    tiles = [f"tile-{ctx.rank}-{i}" for i in range(tiles_per_rank)]
    ctx.barrier()  # tiling must finish everywhere before inference starts
    inferred = len(tiles)
    counts = ctx.gather(inferred)
    if ctx.rank == 0:
        return {"phase": "inference", "device": "gpu", "tiles_total": sum(counts)}
    return {"phase": "inference", "device": "gpu", "tiles": inferred}


@program_payload("true")
def prog_true(args, env):
    return 0


@program_payload("false")
def prog_false(args, env):
    return 1


@program_payload("simulate")
def prog_simulate(args, env):
    # Synthetic stand-in for a multi-rank simulation binary; wall time is
    # modeled by the task's synthetic duration, not here.
    return 0
