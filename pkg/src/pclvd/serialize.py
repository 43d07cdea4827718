"""Versioned JSON persistence for circuits and their LV records.

Layout: a header (format tag, version, variable counts/cards), a ``units``
array in topological order, and an optional ``lv_records`` key. Parameters are
written as plain floats so a round trip reproduces evaluation results exactly
(Python's float repr is shortest-round-trip).
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .circuit import INPUT, KIND_NAMES, PRODUCT, SUM, Circuit, Unit, scope_of, scope_vars
from .errors import DataError
from .materialize import MaterializationRecord

FORMAT = "pc-lvd-circuit"
VERSION = 1

_KIND_BY_NAME = {name: kind for kind, name in KIND_NAMES.items()}


def circuit_to_dict(circuit: Circuit, records: list[MaterializationRecord] | None = None) -> dict:
    units = []
    for u in circuit.units:
        entry: dict = {
            "kind": KIND_NAMES[u.kind],
            "scope": scope_vars(u.scope),
            "children": list(u.children),
        }
        if u.kind == SUM:
            entry["log_weights"] = [float(w) for w in u.log_weights]
        elif u.kind == INPUT:
            entry["dist"] = [float(p) for p in u.dist]
        units.append(entry)
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "num_vars": circuit.num_vars,
        "var_cards": [int(c) for c in circuit.var_cards],
        "units": units,
    }
    if records is not None:
        doc["lv_records"] = [
            {
                "z_var": r.z_var,
                "scope": scope_vars(r.scope),
                "cardinality": r.cardinality,
                "product_units": list(r.product_units),
                "indicator_units": list(r.indicator_units),
            }
            for r in records
        ]
    return doc


def circuit_from_dict(doc: dict) -> tuple[Circuit, list[MaterializationRecord]]:
    if doc.get("format") != FORMAT:
        raise DataError(f"not a circuit document (format={doc.get('format')!r})")
    if doc.get("version") != VERSION:
        raise DataError(f"unsupported circuit version {doc.get('version')!r}")
    var_cards = np.asarray(doc["var_cards"], dtype=np.int64)
    if len(var_cards) != doc["num_vars"]:
        raise DataError("num_vars does not match var_cards length")
    records = [
        MaterializationRecord(
            z_var=r["z_var"],
            scope=scope_of(r["scope"]),
            cardinality=r["cardinality"],
            product_units=tuple(r["product_units"]),
            indicator_units=tuple(r["indicator_units"]),
        )
        for r in doc.get("lv_records", [])
    ]
    indicator_units = {i for r in records for i in r.indicator_units}
    units = []
    for idx, entry in enumerate(doc["units"]):
        kind = _KIND_BY_NAME.get(entry["kind"])
        if kind is None:
            raise DataError(f"unit {idx} has unknown kind {entry['kind']!r}")
        scope = scope_of(entry["scope"])
        children = tuple(entry["children"])
        if kind == INPUT:
            var = entry["scope"][0] if len(entry["scope"]) == 1 else -1
            units.append(
                Unit(
                    INPUT,
                    scope,
                    dist=np.asarray(entry["dist"], dtype=np.float64),
                    var=var,
                    frozen=idx in indicator_units,
                )
            )
        elif kind == SUM:
            units.append(
                Unit(
                    SUM,
                    scope,
                    children,
                    log_weights=np.asarray(entry["log_weights"], dtype=np.float64),
                )
            )
        else:
            units.append(Unit(PRODUCT, scope, children))
    circuit = Circuit(units, len(units) - 1, var_cards)
    return circuit, records


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_circuit(
    circuit: Circuit, path: str, records: list[MaterializationRecord] | None = None
) -> None:
    atomic_write_text(path, json.dumps(circuit_to_dict(circuit, records)))


def load_circuit(path: str) -> tuple[Circuit, list[MaterializationRecord]]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read circuit file {path}: {exc}") from exc
    return circuit_from_dict(doc)
