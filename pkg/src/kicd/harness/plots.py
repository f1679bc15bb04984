from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .report import EvalReport  # noqa: E402

METRICS = (("mean_f1", "F1"), ("mean_shd", "SHD"))


def plot_report(report: EvalReport, out_dir) -> list[Path]:
    """One PNG per (mechanism, metric): metric against retention, one line per prior mode."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for mech in sorted({c["mechanism"] for c in report.cells}):
        cells = [c for c in report.cells if c["mechanism"] == mech and c["status"] == "ok"]
        for key, label in METRICS:
            fig, ax = plt.subplots(figsize=(5, 3.5))
            for mode in sorted({c["prior_mode"] for c in cells}):
                pts = sorted((c["retention"], c[key]) for c in cells if c["prior_mode"] == mode)
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=mode)
            ax.set_xlabel("retention")
            ax.set_ylabel(label)
            ax.set_title(mech)
            ax.legend(fontsize=8)
            fig.tight_layout()
            path = out_dir / f"{mech.replace('/', '_')}_{label.lower()}.png"
            fig.savefig(path, metadata={"Software": None})
            plt.close(fig)
            written.append(path)
    return written
