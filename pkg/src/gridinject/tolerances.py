"""Central registry of numeric tolerances and resolutions.

Every tunable constant lives here under a dotted key so that library code,
the CLI (``--tol KEY=VALUE``), and tests share one source of truth.  Keys
are namespaced by the module that consumes them.

Notable semantics:

* ``grids.tau_det`` < 0 disables the Jacobian-determinant screen during
  grid construction (needed to push deliberately degenerate maps, with an
  identically singular region, through to the marked-point diagnostics).
* ``geometry.tau_on`` is the image-distance guard below which a probe is
  declared to sit on a curve and the winding number is refused.
"""

from __future__ import annotations

from .errors import GridInjectError

DEFAULTS: dict[str, float] = {
    # planar map evaluation
    "planar_maps.tau_disc": 1e-9,     # guard radius around declared discontinuities
    "planar_maps.fd_step": 1e-5,      # central finite-difference step for Jacobians
    # geometry kernel
    "geometry.tau_on": 1e-9,          # point-on-curve guard for winding numbers
    "geometry.winding_residual": 1e-6,  # max |angle-sum/2pi - nearest integer|
    # degree probing
    "inv_check.n_curve": 512,         # samples per circle image
    "inv_check.tv_stability": 0.05,   # relative total-variation stability bound
    # grid construction
    "grids.tau_det": 1e-6,            # min |det Du| along candidate grid lines
    "grids.tau_transversal": 1e-6,    # min image increment across a crossing bracket
    "grids.n_samples": 1024,          # samples per grid line for screens and scans
    "grids.max_retries": 64,          # jitter resamples per line
    # arrival grid
    "arrival.tau_bad": 1e-4,          # half-width of excluded coordinate intervals
    "arrival.max_retries": 64,        # jitter resamples per arrival coordinate
    # injectification
    "injectify.resolution": 256,      # samples per generalized-segment path
    # witness construction
    "witness.n_samples": 2048,        # shared parameter samples for deviation checks
    "witness.resolution": 256,        # samples per witness piece
}


class Tolerances:
    """Immutable-ish view over DEFAULTS with validated overrides."""

    def __init__(self, overrides: dict[str, float] | None = None):
        self._values = dict(DEFAULTS)
        if overrides:
            for key, value in overrides.items():
                if key not in DEFAULTS:
                    raise GridInjectError(
                        "unknown-tolerance",
                        f"unknown tolerance key {key!r}",
                        key=key,
                        known=sorted(DEFAULTS),
                    )
                self._values[key] = float(value)

    def __getitem__(self, key: str) -> float:
        return self._values[key]

    def get(self, key: str, default=None):
        return self._values.get(key, default)

    def to_dict(self) -> dict[str, float]:
        return dict(self._values)


def parse_tol_overrides(pairs: list[str]) -> dict[str, float]:
    """Parse repeated ``KEY=VALUE`` CLI strings into an override dict."""
    overrides: dict[str, float] = {}
    for raw in pairs:
        if "=" not in raw:
            raise GridInjectError(
                "schema-error", f"--tol expects KEY=VALUE, got {raw!r}", raw=raw
            )
        key, _, val = raw.partition("=")
        try:
            overrides[key.strip()] = float(val)
        except ValueError:
            raise GridInjectError(
                "schema-error", f"--tol value for {key!r} is not a number", raw=raw
            ) from None
    return overrides
