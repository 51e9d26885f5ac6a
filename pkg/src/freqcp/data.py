"""JSONL dataset, sample-cache, and probability-file IO with validation.

File formats, one JSON object per line:

* dataset      -- {"id": str, "question": str, "options": [str, ...], "truth": int}
* sample cache -- {"item_id": str, "raw": [str, ...]}  (extra keys ignored)
* logit probs  -- {"item_id": str, "probs": [float, ...]}
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .mcqa import FrequencyTable, McqaItem, SampleRecord, estimate_frequencies

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    """An input file failed validation; the message carries file/line context."""


def _lines(path: Path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def load_dataset(path) -> list[McqaItem]:
    """Load and validate a dataset file; duplicate ids are rejected."""
    path = Path(path)
    items: list[McqaItem] = []
    seen: set[str] = set()
    for lineno, obj in _lines(path):
        try:
            item = McqaItem(
                id=str(obj["id"]),
                question=str(obj["question"]),
                options=tuple(str(o) for o in obj["options"]),
                truth=int(obj["truth"]),
            )
        except KeyError as exc:
            raise DatasetError(f"{path}:{lineno}: missing field {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        if item.id in seen:
            raise DatasetError(f"{path}:{lineno}: duplicate item id {item.id!r}")
        seen.add(item.id)
        items.append(item)
    if not items:
        raise DatasetError(f"{path}: empty dataset")
    return items


def write_dataset(items: Iterable[McqaItem], path) -> None:
    with open(path, "w") as fh:
        for item in items:
            fh.write(
                json.dumps(
                    {
                        "id": item.id,
                        "question": item.question,
                        "options": list(item.options),
                        "truth": item.truth,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_sample_records(path, items: Sequence[McqaItem]) -> dict[str, SampleRecord]:
    """Read sampled generations for the given items; the last record per id wins.

    Lines for unknown item ids are skipped (a shared cache may cover several
    datasets); corrupt lines are skipped with a warning, invalidating only
    themselves.
    """
    path = Path(path)
    by_id = {item.id: item for item in items}
    records: dict[str, SampleRecord] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                item_id = obj["item_id"]
                raw = obj["raw"]
                if not isinstance(raw, list) or not all(isinstance(r, str) for r in raw):
                    raise ValueError("raw must be a list of strings")
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                log.warning("%s:%d: skipping corrupt sample record: %s", path, lineno, exc)
                continue
            item = by_id.get(item_id)
            if item is None:
                continue
            try:
                records[item_id] = SampleRecord.from_raw(item_id, raw, item.num_options)
            except ValueError as exc:
                log.warning("%s:%d: skipping corrupt sample record: %s", path, lineno, exc)
    return records


def write_sample_records(records: Iterable[SampleRecord], path) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(
                json.dumps({"item_id": record.item_id, "raw": list(record.raw)}, sort_keys=True)
                + "\n"
            )


def load_logit_probs(path, items: Sequence[McqaItem]) -> dict[str, FrequencyTable]:
    """Read externally supplied per-option probabilities for every item.

    Every item id must be present and each probability vector must match the
    item's option count, lie in [0, 1] per entry, and sum to at most 1.
    """
    path = Path(path)
    by_id = {item.id: item for item in items}
    tables: dict[str, FrequencyTable] = {}
    for lineno, obj in _lines(path):
        try:
            item_id = obj["item_id"]
            probs = obj["probs"]
        except KeyError as exc:
            raise DatasetError(f"{path}:{lineno}: missing field {exc}") from exc
        item = by_id.get(item_id)
        if item is None:
            continue
        if not isinstance(probs, list) or len(probs) != item.num_options:
            raise DatasetError(
                f"{path}:{lineno}: item {item_id!r} needs {item.num_options} probabilities"
            )
        try:
            tables[item_id] = FrequencyTable.from_probs(item_id, probs)
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    missing = [item.id for item in items if item.id not in tables]
    if missing:
        shown = ", ".join(repr(i) for i in missing[:5])
        raise DatasetError(f"{path}: missing probabilities for {len(missing)} item(s): {shown}")
    return tables


def write_logit_probs(probs_by_id: Mapping[str, Sequence[float]], path) -> None:
    with open(path, "w") as fh:
        for item_id, probs in probs_by_id.items():
            fh.write(
                json.dumps({"item_id": item_id, "probs": [float(p) for p in probs]},
                           sort_keys=True)
                + "\n"
            )


def build_frequency_tables(
    items: Sequence[McqaItem], records: Mapping[str, SampleRecord]
) -> list[FrequencyTable]:
    """Frequency tables for items, in item order; every item needs a record."""
    missing = [item.id for item in items if item.id not in records]
    if missing:
        raise DatasetError(f"missing sample records for {len(missing)} item(s)")
    return [estimate_frequencies(records[item.id], item.num_options) for item in items]
