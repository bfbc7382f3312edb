"""The six benchmark figures as ready-made FigureSpecs over a results
directory produced by the solver CLI."""

from pathlib import Path

from .core import Curve, FigureSpec

CONTROL_LABELS = {
    "err_U": "G-norm state error",
    "err_Y": "spatial-gradient error",
    "err_0": "initial-trace error",
    "err_T": "terminal-trace error",
    "err_l2": "L2 state error",
    "err_z1": "L2 control error",
    "err_J": "cost error",
    "err_p": "G-norm co-state error",
}

MOVING_LABELS = {
    "est": "residual estimator",
    "err_Y": "spatial-gradient error",
    "err_0": "initial-trace error",
    "err_T": "terminal-trace error",
    "err_l2": "L2 error",
}


def _control_spec(results, name, outdir, triangles, fit_tail):
    csv = str(Path(results) / f"{name}.csv")
    curves = [Curve(x="ndof", y=col, label=label)
              for col, label in CONTROL_LABELS.items()]
    return FigureSpec(csv=csv, curves=curves,
                      output=str(Path(outdir) / f"{name}.png"),
                      triangles=triangles, fit_tail=fit_tail,
                      title=name.replace("_", " "))


def _moving_spec(results, name, outdir, triangles, fit_tail):
    csv = str(Path(results) / f"{name}.csv")
    curves = [Curve(x="ndof", y=col, label=label)
              for col, label in MOVING_LABELS.items()]
    return FigureSpec(csv=csv, curves=curves,
                      output=str(Path(outdir) / f"{name}.png"),
                      triangles=triangles, fit_tail=fit_tail,
                      title=name.replace("_", " "))


def build_preset(name, results="results", outdir="figures_out"):
    results, outdir = str(results), str(outdir)
    if name == "rb-offline":
        return FigureSpec(
            csv=str(Path(results) / "rb_offline.csv"),
            curves=[Curve(x="N", y="maxtrain",
                          label="max training estimator")],
            output=str(Path(outdir) / "rb_offline.png"),
            xscale="linear", yscale="log",
            xlabel="number of basis functions N",
            title="greedy training decay")
    if name == "rb-online":
        csv = str(Path(results) / "rb_online.csv")
        return FigureSpec(
            csv=csv,
            curves=[
                Curve(x="mu1", y="est_mu1", label="sweep mu1: estimator"),
                Curve(x="mu1", y="err_mu1", label="sweep mu1: best error",
                      style="--"),
                Curve(x="mu2", y="est_mu2", label="sweep mu2: estimator"),
                Curve(x="mu2", y="err_mu2", label="sweep mu2: best error",
                      style="--"),
            ],
            output=str(Path(outdir) / "rb_online.png"),
            xscale="linear", yscale="log", xlabel="mu1 resp. mu2",
            title="online sweeps")
    if name == "control-1d":
        return _control_spec(results, "control_1d", outdir,
                             triangles=[-0.5, -1.0], fit_tail=4)
    if name == "control-2d":
        return _control_spec(results, "control_2d", outdir,
                             triangles=[-1.0 / 3.0, -2.0 / 3.0], fit_tail=3)
    if name == "moving-1d":
        return _moving_spec(results, "moving_1d", outdir,
                            triangles=[-0.5, -0.8], fit_tail=4)
    if name == "moving-2d":
        return _moving_spec(results, "moving_2d", outdir,
                            triangles=[-1.0 / 3.0, -0.6], fit_tail=3)
    raise KeyError(f"unknown preset {name!r}")


ALL_PRESETS = ("rb-offline", "rb-online", "control-1d", "control-2d",
               "moving-1d", "moving-2d")
