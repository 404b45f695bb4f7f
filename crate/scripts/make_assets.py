#!/usr/bin/env python3
"""Regenerates assets/coupled30.json, assets/hipv.json and assets/day.csv.

twobus.json is maintained by hand.
"""
import json
import math
from pathlib import Path

ASSETS = Path(__file__).resolve().parent.parent / "assets"

CONDUCTORS = [
    {"name": "336400_26_7_acsr", "gmr_ft": 0.0244, "resistance_ohm_per_mile": 0.306, "ampacity_a": 530.0},
    {"name": "4_0_6_1_acsr", "gmr_ft": 0.00814, "resistance_ohm_per_mile": 0.592, "ampacity_a": 340.0},
]
GEOMETRIES = [{"name": "pole_4w", "conductors": [
    {"label": "A", "x_ft": 0.0, "y_ft": 29.0, "conductor": "336400_26_7_acsr"},
    {"label": "B", "x_ft": 2.5, "y_ft": 29.0, "conductor": "336400_26_7_acsr"},
    {"label": "C", "x_ft": 7.0, "y_ft": 29.0, "conductor": "336400_26_7_acsr"},
    {"label": "N", "x_ft": 4.0, "y_ft": 25.0, "conductor": "4_0_6_1_acsr"},
]}]


def bus(i):
    return "src" if i == 0 else f"n{i:02d}"


def segments(edges, length):
    return [{"id": f"s{t:02d}", "from_bus": bus(f), "to_bus": bus(t), "length_miles": length, "geometry": "pole_4w"}
            for f, t in edges]


def coupled30():
    # trunk n01-n20, laterals n21-n25 (from n08) and n26-n30 (from n14)
    edges = [(i - 1, i) for i in range(1, 21)] + [(8, 21)] + [(i - 1, i) for i in range(22, 26)] \
        + [(14, 26)] + [(i - 1, i) for i in range(27, 31)]
    load_kw = {"A": 25.0, "B": 30.0, "C": 20.0}
    loads = [{"id": f"ld{i:02d}", "bus": bus(i), "phase": "ABC"[i % 3], "p_kw": load_kw["ABC"[i % 3]], "pf": 0.95}
             for i in range(1, 31)]
    pvs = [{"id": f"pv{i:02d}a", "bus": bus(i), "phase": "A", "p_kw": 60.0, "s_rating_kva": 150.0} for i in (12, 18, 27)]
    pvs += [{"id": f"pv{i:02d}c", "bus": bus(i), "phase": "C", "p_kw": 40.0, "s_rating_kva": 100.0} for i in (10, 24)]
    pvs += [{"id": f"pv{i:02d}b", "bus": bus(i), "phase": "B", "p_kw": 70.0, "s_rating_kva": 110.0}
            for i in (6, 9, 11, 13, 15, 16, 17, 19, 20, 22, 25)]
    return {
        "schema_version": 1,
        "name": "coupled30",
        "notes": [
            "Synthetic 30-bus multi-grounded feeder with a phase-B regulator on the first segment.",
            "PVs are listed in addition order: phase A and C units first, then phase-B units.",
            "Phase A sits just under the upper limit once the phase-B units are in; absorbing on phase B pushes it over.",
            "Per-unit base 4.058 kV puts the source at 1.025 p.u.",
        ],
        "source_bus": "src",
        "source_voltage_kv_ll": 4.16,
        "base_voltage_kv_ll": 4.058,
        "conductors": CONDUCTORS,
        "geometries": GEOMETRIES,
        "buses": [{"id": bus(i)} for i in range(31)],
        "segments": segments(edges, 0.05),
        "loads": loads,
        "pvs": pvs,
        "regulators": [{"id": "regB", "segment": "s01", "phase": "B", "tap_ratio": 1.02}],
    }


def hipv():
    n = 12
    load_kw = {"A": 50.0, "B": 25.0, "C": 50.0}
    loads = [{"id": f"ld{i:02d}{ph.lower()}", "bus": bus(i), "phase": ph, "p_kw": load_kw[ph], "pf": 0.95}
             for i in range(1, n + 1) for ph in "ABC"]
    pvs = [{"id": f"pv{i:02d}b", "bus": bus(i), "phase": "B", "p_kw": 130.0, "s_rating_kva": 131.0}
           for i in (4, 6, 8, 10, 11, 12)]
    pvs += [{"id": f"pv{i:02d}{ph.lower()}", "bus": bus(i), "phase": ph, "p_kw": 20.0, "s_rating_kva": 200.0}
            for i in (5, 9, 12) for ph in "AC"]
    pvs.sort(key=lambda p: p["id"])
    return {
        "schema_version": 1,
        "name": "hipv",
        "notes": [
            "12-bus trunk with heavy phase-B PV whose inverters are sized almost at their real output.",
            "Phase-B and phase-C regulators on the first segment (taps 1.035 and 1.04).",
            "Around midday phase B exceeds the upper limit by more than its own PVs can absorb; phase A and C PVs have headroom.",
            "Profiles in day.csv scale every load and PV.",
        ],
        "source_bus": "src",
        "source_voltage_kv_ll": 4.16,
        "conductors": CONDUCTORS,
        "geometries": GEOMETRIES,
        "buses": [{"id": bus(i)} for i in range(n + 1)],
        "segments": segments([(i - 1, i) for i in range(1, n + 1)], 0.1),
        "loads": loads,
        "pvs": pvs,
        "regulators": [
            {"id": "regB", "segment": "s01", "phase": "B", "tap_ratio": 1.035},
            {"id": "regC", "segment": "s01", "phase": "C", "tap_ratio": 1.04},
        ],
    }


def day(feeder):
    load_shape = [0.45, 0.42, 0.40, 0.40, 0.42, 0.50, 0.62, 0.72, 0.75, 0.74, 0.72, 0.70,
                  0.70, 0.70, 0.72, 0.76, 0.84, 0.95, 1.00, 0.98, 0.90, 0.78, 0.64, 0.52]
    # clipped sine between 06:00 and 19:00
    pv_shape = []
    for h in range(24):
        x = max(0.0, math.sin(math.pi * (h - 6) / 13)) if 6 <= h <= 19 else 0.0
        pv_shape.append(round(min(1.0, 1.3 * x ** 1.2), 3))
    targets = [f"load:{l['id']}" for l in feeder["loads"]] + [f"pv:{p['id']}" for p in feeder["pvs"]]
    lines = [",".join(["label"] + targets)]
    for h in range(24):
        vals = [f"{load_shape[h]:.2f}"] * len(feeder["loads"]) + [f"{pv_shape[h]:.3f}"] * len(feeder["pvs"])
        lines.append(",".join([f"h{h:02d}"] + vals))
    return "\n".join(lines) + "\n"


def main():
    c30 = coupled30()
    hp = hipv()
    (ASSETS / "coupled30.json").write_text(json.dumps(c30, indent=1) + "\n")
    (ASSETS / "hipv.json").write_text(json.dumps(hp, indent=1) + "\n")
    (ASSETS / "day.csv").write_text(day(hp))


if __name__ == "__main__":
    main()
