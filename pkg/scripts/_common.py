"""Helpers shared by the experiment scripts."""

import argparse
import json
from dataclasses import asdict, fields
from pathlib import Path


def parse_into(cls, description: str):
    """Build an argparse CLI from a dataclass and return an instance."""
    ap = argparse.ArgumentParser(description=description)
    for f in fields(cls):
        flag = "--" + f.name.replace("_", "-")
        default = f.default
        if isinstance(default, bool):
            ap.add_argument(flag, action="store_true", default=default)
        elif isinstance(default, tuple):
            ap.add_argument(flag, type=type(default[0]), nargs="+", default=list(default))
        else:
            ap.add_argument(flag, type=type(default), default=default)
    ns = vars(ap.parse_args())
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in ns.items()})


def dump(cfg, result: dict, out: str | None):
    text = json.dumps({"config": asdict(cfg), "result": result}, indent=2, default=float)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    return text
