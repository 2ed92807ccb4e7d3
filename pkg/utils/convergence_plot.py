import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
import plotly.graph_objects as go

ERROR_COLUMNS = ("err_energy", "err_l2", "err_lagrange")
LABELS = {"err_energy": "energy (rel.)", "err_l2": "L2 (rel.)", "err_lagrange": "Lagrange (abs.)"}


def _reference_slope(h: pd.Series, e: pd.Series, order: float) -> tuple[np.ndarray, np.ndarray]:
    """过最细网格点的参考斜率线 e = C h^order。"""
    hs = np.array([h.iloc[-2], h.iloc[-1]], dtype=float)
    c = float(e.iloc[-1]) / float(h.iloc[-1]) ** order
    return hs, c * hs**order


def generate_convergence_plot(
    csv_path: str,
    out_dir: str = "outputs/plots",
    columns: tuple[str, ...] = ERROR_COLUMNS,
    reference_orders: dict[str, float] | None = None,
) -> dict:
    """
    读取收敛 CSV（meshsize + err_* 列），生成双对数坐标的交互式 HTML。
    返回: {"status":"ok","kind":"loglog","html_path": "...", "points": N}
    """
    p = Path(csv_path)
    if not p.exists():
        raise FileNotFoundError(f"CSV not found: {csv_path}")
    df = pd.read_csv(p)
    if "meshsize" not in df.columns:
        raise ValueError(f"Column 'meshsize' not found. columns={list(df.columns)}")
    present = [c for c in columns if c in df.columns]
    if not present:
        raise ValueError(f"No error columns among {list(columns)}. columns={list(df.columns)}")

    # 按网格尺寸从粗到细排序
    df = df.sort_values(by="meshsize", ascending=False, kind="mergesort")

    fig = go.Figure()
    for col in present:
        # 误差为 0 的点在对数轴上无法显示，丢弃
        part = df[df[col] > 0]
        fig.add_trace(go.Scatter(x=part["meshsize"], y=part[col], mode="lines+markers", name=LABELS.get(col, col)))
        order = (reference_orders or {}).get(col)
        if order is not None and len(part) >= 2:
            hs, es = _reference_slope(part["meshsize"], part[col], order)
            fig.add_trace(go.Scatter(x=hs, y=es, mode="lines", line=dict(dash="dash"), name=f"slope {order:g}"))

    fig.update_layout(
        title=f"Convergence ({p.stem})",
        template="plotly_white",
        hovermode="x unified",
        legend_title_text="",
        margin=dict(l=40, r=20, t=60, b=40),
    )
    fig.update_xaxes(title="meshsize h", type="log", autorange="reversed", showgrid=True)
    fig.update_yaxes(title="error", type="log", showgrid=True, exponentformat="e")

    # 输出
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    ts = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    fname = f"{str(p.stem).replace(os.sep, '_')}_loglog_{ts}.html"
    out_path = str(Path(out_dir) / fname)
    fig.write_html(out_path, include_plotlyjs="cdn", full_html=True)

    return {
        "status": "ok",
        "kind": "loglog",
        "html_path": out_path,
        "points": int(df.shape[0]),
        "series": present,
    }
