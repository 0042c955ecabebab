"""Regenerate the bundled benchmark grid files under src/gridmon/data/.

Parameters are transcribed from the public CIGRE MV benchmark network
(European configuration, as distributed with open-source power system
tools). Three variants are written:

  cigre_mv_base  - the benchmark with PV/wind units at original ratings
  cigre_mv_mod   - DG nominal power doubled, every unit at cos phi 0.97;
                   batteries / fuel cells / CHP left out
  cigre_mv_ext   - like mod, plus the two battery systems and loads split
                   into residential/commercial tags for five-axis studies

The HV/MV transformers are folded into series-equivalent branches
(monitored=False) so bus 0 acts as the slack at the 20 kV level.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "src" / "gridmon" / "data"

OMEGA = 2.0 * math.pi * 50.0

# conductor data: r, x [ohm/km], c [nF/km], rating [kA]
CABLE = dict(r=0.501, x=0.716, c_nf=151.1749, i_ka=0.145)
OHL = dict(r=0.510, x=0.366, c_nf=10.09679, i_ka=0.195)

# (from, to, length_km, conductor)
LINES = [
    (1, 2, 2.82, CABLE),
    (2, 3, 4.42, CABLE),
    (3, 4, 0.61, CABLE),
    (4, 5, 0.56, CABLE),
    (5, 6, 1.54, CABLE),
    (7, 8, 1.67, CABLE),
    (8, 9, 0.32, CABLE),
    (9, 10, 0.77, CABLE),
    (10, 11, 0.33, CABLE),
    (3, 8, 1.30, CABLE),
    (12, 13, 4.89, OHL),
    (13, 14, 2.99, OHL),
    (6, 7, 0.24, CABLE),
    (11, 4, 0.49, CABLE),
    (14, 8, 2.00, OHL),
]

# 25 MVA 110/20 kV transformers, vk 12.00107 %, vkr 0.16 %. Folded into
# series-equivalent branches referred to the 20 kV side, so bus 0 acts as
# the slack at the MV level without explicit tap/ratio modeling.
TRAFO_SN_MVA = 25.0
TRAFO_VK_PCT = 12.00107
TRAFO_VKR_PCT = 0.16
TRAFO_BRANCHES = [(0, 1), (0, 12)]

# switchable lines in catalog column order: 14-8, 6-7, 4-11, 8-9, 3-4, 3-8
SWITCH_ORDER = ["14-8", "6-7", "11-4", "8-9", "3-4", "3-8"]
# nominal state = radial benchmark operation (tie lines open)
NOMINAL_CLOSED = {"14-8": False, "6-7": False, "11-4": False,
                  "8-9": True, "3-4": True, "3-8": True}

# loads: (bus, apparent power MVA, cos phi, profile tag)
LOADS = [
    (1, 15.300, 0.98, "res"),
    (3, 0.285, 0.97, "res"),
    (4, 0.445, 0.97, "res"),
    (5, 0.750, 0.97, "res"),
    (6, 0.565, 0.97, "res"),
    (8, 0.605, 0.97, "res"),
    (10, 0.490, 0.97, "res"),
    (11, 0.340, 0.97, "res"),
    (12, 15.300, 0.98, "res"),
    (14, 0.215, 0.97, "res"),
    (1, 5.100, 0.95, "com"),
    (3, 0.265, 0.85, "com"),
    (7, 0.090, 0.85, "com"),
    (9, 0.675, 0.85, "com"),
    (10, 0.080, 0.85, "com"),
    (12, 5.280, 0.95, "com"),
    (13, 0.040, 0.85, "com"),
    (14, 0.390, 0.85, "com"),
]

# PV generators: (bus, base rating kW); one wind unit at bus 7 (1500 kW base)
PV = [(3, 20.0), (4, 20.0), (5, 30.0), (6, 30.0), (8, 30.0), (9, 30.0),
      (10, 40.0), (11, 10.0)]
WEC = [(7, 1500.0)]
BATTERIES = [(5, 600.0), (10, 200.0)]

V_KV = 20.0


def line_records():
    records = []
    for idx, (a, b, length, cond) in enumerate(LINES):
        b_us = OMEGA * cond["c_nf"] * 1e-9 * length * 1e6
        records.append({
            "id": idx,
            "from_bus": a,
            "to_bus": b,
            "r_ohm": round(cond["r"] * length, 6),
            "x_ohm": round(cond["x"] * length, 6),
            "b_us": round(b_us, 6),
            "rating_amps": cond["i_ka"] * 1000.0,
        })
    z_base_trafo = V_KV**2 / TRAFO_SN_MVA
    z = TRAFO_VK_PCT / 100.0 * z_base_trafo
    r = TRAFO_VKR_PCT / 100.0 * z_base_trafo
    x = math.sqrt(z * z - r * r)
    rating = TRAFO_SN_MVA * 1e6 / (math.sqrt(3.0) * V_KV * 1e3)
    for a, b in TRAFO_BRANCHES:
        records.append({
            "id": len(records),
            "from_bus": a,
            "to_bus": b,
            "r_ohm": round(r, 6),
            "x_ohm": round(x, 6),
            "b_us": 0.0,
            "rating_amps": round(rating, 3),
            "monitored": False,
        })
    return records


def switch_records(lines):
    by_name = {}
    for rec in lines:
        by_name[f"{rec['from_bus']}-{rec['to_bus']}"] = rec["id"]
    records = []
    for idx, name in enumerate(SWITCH_ORDER):
        records.append({
            "id": idx,
            "line_id": by_name[name],
            "closed": NOMINAL_CLOSED[name],
        })
    return records


def unit_records(dg_scale: float, uniform_cos_phi: float | None,
                 tagged_loads: bool, with_batteries: bool):
    records = []
    uid = 0
    for bus, s_mva, cos_phi, tag in LOADS:
        records.append({
            "id": uid,
            "bus": bus,
            "kind": f"load_{tag}" if tagged_loads else "load",
            "p_nom_kw": round(s_mva * cos_phi * 1000.0, 3),
            "cos_phi": uniform_cos_phi if uniform_cos_phi else cos_phi,
        })
        uid += 1
    for bus, p_kw in PV:
        records.append({
            "id": uid, "bus": bus, "kind": "pv",
            "p_nom_kw": p_kw * dg_scale,
            "cos_phi": uniform_cos_phi if uniform_cos_phi else 1.0,
        })
        uid += 1
    for bus, p_kw in WEC:
        records.append({
            "id": uid, "bus": bus, "kind": "wec",
            "p_nom_kw": p_kw * dg_scale,
            "cos_phi": uniform_cos_phi if uniform_cos_phi else 1.0,
        })
        uid += 1
    if with_batteries:
        for bus, p_kw in BATTERIES:
            records.append({
                "id": uid, "bus": bus, "kind": "battery",
                "p_nom_kw": p_kw,
                "cos_phi": uniform_cos_phi if uniform_cos_phi else 1.0,
            })
            uid += 1
    return records


def build(name: str, dg_scale: float, uniform_cos_phi: float | None,
          tagged_loads: bool = False, with_batteries: bool = False):
    lines = line_records()
    doc = {
        "format": 1,
        "name": name,
        "base": {"s_base_mva": 1.0},
        "buses": [{"id": 0, "kind": "slack", "base_kv": V_KV}]
        + [{"id": i, "kind": "pq", "base_kv": V_KV} for i in range(1, 15)],
        "lines": lines,
        "switches": switch_records(lines),
        "units": unit_records(dg_scale, uniform_cos_phi, tagged_loads, with_batteries),
    }
    out = OUT / f"{name}.grid.json"
    out.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    print("wrote", out)


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    build("cigre_mv_base", dg_scale=1.0, uniform_cos_phi=None)
    build("cigre_mv_mod", dg_scale=2.0, uniform_cos_phi=0.97)
    build("cigre_mv_ext", dg_scale=2.0, uniform_cos_phi=0.97,
          tagged_loads=True, with_batteries=True)
