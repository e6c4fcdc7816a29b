"""
Declarative generator/discriminator layer specs and the parameter-count auditor.

Per-layer parameters follow #Parameters = C_out * (C_in * K^2 + 1). Normalization
layers add 4 * C_out (scale, shift, running mean, running variance).
"""

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple, TypedDict

from deblur_gan.errors import ArchitectureError
from deblur_gan.utils.layer_tables import (
    DISCRIMINATOR_LAYERS,
    GENERATOR_LAYERS,
    GAN_TOTAL_APPROX,
    KNOWN_TOTAL_DISCREPANCIES,
    get_declared_total,
)

KINDS = ("convolution", "upsample_convolution")
ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "none")
UPSAMPLE_MODES = ("nearest", "transposed")

GENERATOR_RESIDUAL_BLOCKS = 9
LEAKY_RELU_SLOPE = 0.2


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    K: int
    S: int
    C_in: int
    C_out: int
    normalization: bool
    activation: str
    declared_params: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArchitectureError(f"Layer {self.name}: unknown kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ArchitectureError(f"Layer {self.name}: unknown activation {self.activation!r}")
        for symbol in ("K", "S", "C_in", "C_out"):
            if getattr(self, symbol) < 1:
                raise ArchitectureError(
                    f"Layer {self.name}: {symbol} must be >= 1, got {getattr(self, symbol)}"
                )


@dataclass(frozen=True)
class ArchitectureSpec:
    network: str
    layers: Tuple[LayerSpec, ...]
    residual_pairs: Tuple[Tuple[int, int], ...] = ()
    global_skip: bool = False
    upsample_layers: FrozenSet[str] = frozenset()
    upsample_mode: str = "nearest"
    width_divisor: int = 1
    declared_total: Optional[int] = None

    def __post_init__(self):
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ArchitectureError(
                f"Unknown upsample mode {self.upsample_mode!r}; expected one of {UPSAMPLE_MODES}"
            )
        names = {layer.name for layer in self.layers}
        missing = self.upsample_layers - names
        if missing:
            raise ArchitectureError(f"Upsample layers not in spec: {sorted(missing)}")
        for start, end in self.residual_pairs:
            if not 0 <= start <= end < len(self.layers):
                raise ArchitectureError(f"Residual pair ({start}, {end}) is out of range")
            for layer in self.layers[start : end + 1]:
                if layer.C_in != layer.C_out or layer.S != 1:
                    raise ArchitectureError(
                        f"Residual layer {layer.name} must keep channels and use stride 1"
                    )

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)


class AuditRow(TypedDict):
    name: str
    K: int
    S: int
    C_in: int
    C_out: int
    params: int
    norm_params: int
    declared: Optional[int]
    matches: Optional[bool]


@dataclass
class AuditReport:
    network: str
    rows: List[AuditRow]
    conv_total: int
    norm_total: int
    grand_total: int
    declared_total: Optional[int]
    mismatches: List[str] = field(default_factory=list)

    @property
    def total_discrepancy(self) -> Optional[int]:
        """Declared summary total minus the larger computed total it could mean."""
        if self.declared_total is None:
            return None
        if self.declared_total in (self.conv_total, self.grand_total):
            return 0
        return self.declared_total - self.conv_total

    @property
    def total_matches(self) -> Optional[bool]:
        if self.declared_total is None:
            return None
        return self.total_discrepancy == 0

    @property
    def discrepancy_is_known(self) -> bool:
        if not self.total_discrepancy:
            return False
        return KNOWN_TOTAL_DISCREPANCIES.get(self.network) == self.total_discrepancy

    @property
    def per_layer_ok(self) -> bool:
        return not self.mismatches

    def to_table(self) -> str:
        """Plain-text table in the column order name, K, S, C_in, C_out, #Parameters."""
        header = f"{'name':<12}{'K':>4}{'S':>4}{'C_in':>7}{'C_out':>7}{'#Parameters':>14}  mismatch"
        lines = [f"{self.network.capitalize()}", header, "-" * len(header)]
        for row in self.rows:
            if row["matches"] is None:
                flag = "-"
            else:
                flag = "ok" if row["matches"] else f"declared {row['declared']}"
            lines.append(
                f"{row['name']:<12}{row['K']:>4}{row['S']:>4}{row['C_in']:>7}"
                f"{row['C_out']:>7}{row['params']:>14}  {flag}"
            )
        lines.append("-" * len(header))
        lines.append(f"{'conv total':<34}{self.conv_total:>14}")
        lines.append(f"{'normalization total':<34}{self.norm_total:>14}")
        lines.append(f"{'grand total':<34}{self.grand_total:>14}")
        if self.declared_total is not None:
            if self.total_matches:
                which = "grand" if self.declared_total == self.grand_total else "conv"
                status = f"matches declared summary total ({which} total)"
            elif self.discrepancy_is_known:
                status = (
                    f"differs from declared summary total by {self.total_discrepancy}"
                    " (known, documented)"
                )
            else:
                status = f"differs from declared summary total by {self.total_discrepancy}"
            lines.append(f"{'declared summary total':<34}{self.declared_total:>14}  {status}")
        return "\n".join(lines)


def _scaled(channels: int, width_divisor: int) -> int:
    return max(1, channels // width_divisor)


def generator_spec(width_divisor: int = 1, upsample_mode: str = "nearest") -> ArchitectureSpec:
    """
    Generator layer table: 7x7 stem, two stride-2 downsampling convs, nine
    residual blocks of two 3x3 convs, two upsampling convs and a 7x7 tanh head.

    Args:
        width_divisor: Divide every hidden channel count (1 keeps the declared table)
        upsample_mode: 'nearest' (x2 resize before the conv) or 'transposed'
    """
    if width_divisor < 1:
        raise ArchitectureError(f"width_divisor must be >= 1, got {width_divisor}")
    w64, w128, w256 = (_scaled(c, width_divisor) for c in (64, 128, 256))

    layers = [
        ("conv2d", "convolution", 7, 1, 3, w64, True, "relu"),
        ("conv2d_1", "convolution", 3, 2, w64, w128, True, "relu"),
        ("conv2d_2", "convolution", 3, 2, w128, w256, True, "relu"),
    ]
    residual_pairs = []
    for block in range(GENERATOR_RESIDUAL_BLOCKS):
        first = 3 + 2 * block
        layers.append((f"conv2d_{first}", "convolution", 3, 1, w256, w256, True, "relu"))
        layers.append((f"conv2d_{first + 1}", "convolution", 3, 1, w256, w256, True, "none"))
        residual_pairs.append((first, first + 1))
    layers += [
        ("conv2d_21", "upsample_convolution", 3, 1, w256, w128, True, "relu"),
        ("conv2d_22", "upsample_convolution", 3, 1, w128, w64, True, "relu"),
        ("conv2d_23", "convolution", 7, 1, w64, 3, False, "tanh"),
    ]

    unscaled = width_divisor == 1
    specs = tuple(
        LayerSpec(
            name=name, kind=kind, K=k, S=s, C_in=c_in, C_out=c_out,
            normalization=norm, activation=act,
            declared_params=GENERATOR_LAYERS[name][4] if unscaled else None,
        )
        for name, kind, k, s, c_in, c_out, norm, act in layers
    )
    return ArchitectureSpec(
        network="generator",
        layers=specs,
        residual_pairs=tuple(residual_pairs),
        global_skip=True,
        upsample_layers=frozenset({"conv2d_21", "conv2d_22"}),
        upsample_mode=upsample_mode,
        width_divisor=width_divisor,
        declared_total=get_declared_total("generator") if unscaled else None,
    )


def discriminator_spec(width_divisor: int = 1) -> ArchitectureSpec:
    """Discriminator layer table: four 4x4 stride-2 convs, two 4x4 stride-1 convs, sigmoid map."""
    if width_divisor < 1:
        raise ArchitectureError(f"width_divisor must be >= 1, got {width_divisor}")
    unscaled = width_divisor == 1
    specs = []
    names = list(DISCRIMINATOR_LAYERS)
    for index, name in enumerate(names):
        k, s, c_in, c_out, declared = DISCRIMINATOR_LAYERS[name]
        last = index == len(names) - 1
        specs.append(
            LayerSpec(
                name=name, kind="convolution", K=k, S=s,
                C_in=c_in if index == 0 else _scaled(c_in, width_divisor),
                C_out=c_out if last else _scaled(c_out, width_divisor),
                normalization=False,
                activation="sigmoid" if last else "leaky_relu",
                declared_params=declared if unscaled else None,
            )
        )
    return ArchitectureSpec(
        network="discriminator",
        layers=tuple(specs),
        width_divisor=width_divisor,
        declared_total=get_declared_total("discriminator") if unscaled else None,
    )


def layer_param_count(layer: LayerSpec) -> int:
    """C_out * (C_in * K^2 + 1): weights plus one bias per output channel."""
    return layer.C_out * (layer.C_in * layer.K**2 + 1)


def norm_param_count(layer: LayerSpec) -> int:
    """Scale, shift, running mean and running variance per output channel."""
    return 4 * layer.C_out if layer.normalization else 0


def audit_architecture(spec: ArchitectureSpec) -> AuditReport:
    rows: List[AuditRow] = []
    mismatches = []
    for layer in spec.layers:
        params = layer_param_count(layer)
        matches = None if layer.declared_params is None else params == layer.declared_params
        if matches is False:
            mismatches.append(
                f"{layer.name}: computed {params}, declared {layer.declared_params}"
            )
        rows.append(
            AuditRow(
                name=layer.name, K=layer.K, S=layer.S, C_in=layer.C_in, C_out=layer.C_out,
                params=params, norm_params=norm_param_count(layer),
                declared=layer.declared_params, matches=matches,
            )
        )
    conv_total = sum(row["params"] for row in rows)
    norm_total = sum(row["norm_params"] for row in rows)
    return AuditReport(
        network=spec.network,
        rows=rows,
        conv_total=conv_total,
        norm_total=norm_total,
        grand_total=conv_total + norm_total,
        declared_total=spec.declared_total,
        mismatches=mismatches,
    )


def audit_summary(reports: List[AuditReport]) -> Dict[str, object]:
    """Roll several audits into the figures the audit command prints."""
    per_layer_ok = all(report.per_layer_ok for report in reports)
    unexplained = [
        report.network
        for report in reports
        if report.total_matches is False and not report.discrepancy_is_known
    ]
    return {
        "per_layer_ok": per_layer_ok,
        "unexplained_total_mismatches": unexplained,
        "combined_grand_total": sum(report.grand_total for report in reports),
        "combined_declared_total": sum(report.declared_total or 0 for report in reports),
        "quoted_gan_total": GAN_TOTAL_APPROX,
    }
