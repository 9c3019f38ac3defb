"""Plain-text PDF rendering of an experiment's aggregate tables."""

import logging
from pathlib import Path
from typing import List, Mapping

from fpdf import FPDF
from fpdf.enums import XPos, YPos

logger = logging.getLogger(__name__)

LINE_HEIGHT = 5


def _fmt(value) -> str:
    if value is None:
        return "-"
    return f"{value:.4f}"


def _band(band: Mapping) -> str:
    return f"{_fmt(band['median'])}  [{_fmt(band['p10'])}, {_fmt(band['p90'])}]"


def build_report_lines(aggregate: Mapping) -> List[str]:
    """Text lines of the report; ASCII only so the core Courier font can render them"""
    lines = [
        f"Preset: {aggregate['preset']}    dimension: {aggregate['dim']}",
        "Bands are median [10%, 90%] over replications",
        "",
    ]
    for algorithm, entry in sorted(aggregate['algorithms'].items()):
        lines.append(f"== {algorithm.upper()} ({len(entry['replications'])} replications) ==")
        lines.append(f"  acceptance rate     {_band(entry['acceptance_rate'])}")
        lines.append(f"  mean alpha          {_band(entry['mean_alpha'])}")
        if 'hpd_outside' in entry:
            lines.append(f"  outside top HPD     {_band(entry['hpd_outside'])}")
        for level, band in entry.get('hpd_inside', {}).items():
            lines.append(f"  inside {float(level):>5.0%} HPD    {_band(band)}")
        for i, band in enumerate(entry['coordinate_means'], start=1):
            lines.append(f"  mean of x_{i:<3d}       {_band(band)}")

        if entry['log_diag_checkpoints']:
            lines.append("  log S_11 at checkpoints:")
            for row in entry['log_diag_checkpoints'][-3:]:
                lines.append(f"    n={row['n']:<10d} {_band(row)}")
        if entry['b_checkpoints']:
            lines.append("  suboptimality b at checkpoints:")
            for row in entry['b_checkpoints'][-3:]:
                lines.append(f"    n={row['n']:<10d} {_band(row)}")

        rmse = entry.get('rmse')
        if rmse:
            scale = rmse['scale']
            lines.append(f"  RMSE (x{scale:g}):")
            for name, value in rmse['per_group'].items():
                lines.append(f"    group {name:<12s} {_fmt(value)}")
            for name, value in rmse['per_statistic'].items():
                lines.append(f"    {name:<18s} {_fmt(value)}")
        lines.append("")
    return [line.encode('ascii', 'replace').decode('ascii') for line in lines]


def write_pdf_report(aggregate: Mapping, path) -> Path:
    """Write the aggregate tables to `path` as a monospaced PDF"""
    path = Path(path)
    pdf = FPDF()
    pdf.add_page()
    pdf.set_font("Courier", size=9)
    for line in build_report_lines(aggregate):
        pdf.cell(0, LINE_HEIGHT, text=line, new_x=XPos.LMARGIN, new_y=YPos.NEXT)
    pdf.output(str(path))
    logger.info("Wrote report %s", path)
    return path
