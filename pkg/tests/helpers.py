import numpy as np

from posbias.domain import Catalog, InteractionLog, RelevanceModel, World


def make_world(p):
    p = np.atleast_2d(np.asarray(p, dtype=float))
    return World(Catalog(p.shape[1]), RelevanceModel(p))


def fixed_log(rows, iteration=0):
    """Build a log from ``(segment, items, clicked)`` triples; clicked slots are examined."""
    segments = [r[0] for r in rows]
    items = [list(r[1]) for r in rows]
    clicked = [list(map(bool, r[2])) for r in rows]
    return InteractionLog(
        session_id=np.arange(len(rows)),
        segment=segments,
        items=items,
        examined=np.ones((len(rows), len(items[0])), dtype=bool),
        clicked=clicked,
        iteration=iteration,
    )


def examination_log(world, beta, n_sessions, seed=3, slate_length=6):
    """Random-slate log in examination mode under a ``k^-beta`` curve."""
    from posbias.domain import PositionBiasCurve
    from posbias.loop_engine import LoopConfig, random_slate_log

    cfg = LoopConfig(
        sessions_per_iteration=n_sessions, slate_length=slate_length, mode="examination",
        curve=PositionBiasCurve.power_law(beta, slate_length), seed=seed,
    )
    return random_slate_log(cfg, world)
