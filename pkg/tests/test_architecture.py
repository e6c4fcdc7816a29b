import pytest

from deblur_gan.architecture import (
    ArchitectureSpec,
    LayerSpec,
    audit_architecture,
    audit_summary,
    discriminator_spec,
    generator_spec,
    layer_param_count,
    norm_param_count,
)
from deblur_gan.errors import ArchitectureError
from deblur_gan.utils.layer_tables import (
    DISCRIMINATOR_LAYERS,
    GENERATOR_LAYERS,
    GAN_TOTAL_APPROX,
    get_declared_total,
)


def _layer(K=1, C_in=1, C_out=1, normalization=False):
    return LayerSpec("toy", "convolution", K, 1, C_in, C_out, normalization, "none")


@pytest.mark.parametrize("name", list(GENERATOR_LAYERS))
def test_generator_rows_match_declared_counts(name):
    k, s, c_in, c_out, declared = GENERATOR_LAYERS[name]
    layer = generator_spec().layer(name)
    assert (layer.K, layer.S, layer.C_in, layer.C_out) == (k, s, c_in, c_out)
    assert layer_param_count(layer) == declared


@pytest.mark.parametrize("name", list(DISCRIMINATOR_LAYERS))
def test_discriminator_rows_match_declared_counts(name):
    k, s, c_in, c_out, declared = DISCRIMINATOR_LAYERS[name]
    layer = discriminator_spec().layer(name)
    assert (layer.K, layer.S, layer.C_in, layer.C_out) == (k, s, c_in, c_out)
    assert layer_param_count(layer) == declared


def test_generator_spec_shape():
    spec = generator_spec()
    assert len(spec.layers) == 24
    assert len(spec.residual_pairs) == 9
    assert spec.global_skip
    assert spec.upsample_layers == {"conv2d_21", "conv2d_22"}
    head = spec.layer("conv2d_23")
    assert head.activation == "tanh" and not head.normalization
    assert all(layer.normalization for layer in spec.layers[:-1])


def test_discriminator_spec_shape():
    spec = discriminator_spec()
    assert len(spec.layers) == 6
    assert spec.residual_pairs == () and not spec.global_skip
    assert [layer.activation for layer in spec.layers] == ["leaky_relu"] * 5 + ["sigmoid"]
    assert not any(layer.normalization for layer in spec.layers)


def test_layer_param_count_examples():
    assert layer_param_count(_layer(K=7, C_in=3, C_out=64)) == 9472
    assert layer_param_count(_layer(K=4, C_in=512, C_out=1)) == 8193
    assert layer_param_count(_layer()) == 2


def test_norm_param_count_examples():
    assert norm_param_count(_layer(C_out=256, normalization=True)) == 1024
    assert norm_param_count(_layer(C_out=256)) == 0
    assert sum(norm_param_count(layer) for layer in generator_spec().layers) == 20992


def test_generator_audit_totals():
    report = audit_architecture(generator_spec())
    assert report.conv_total == 11378179
    assert report.norm_total == 20992
    assert report.grand_total == 11399171
    assert report.total_matches
    assert report.per_layer_ok


def test_discriminator_audit_flags_known_discrepancy():
    report = audit_architecture(discriminator_spec())
    assert report.conv_total == 2830337
    assert report.declared_total == 3098370
    assert report.total_discrepancy == 268033
    assert report.total_matches is False
    assert report.discrepancy_is_known
    assert report.per_layer_ok


def test_audit_summary_accepts_known_discrepancy():
    reports = [audit_architecture(generator_spec()), audit_architecture(discriminator_spec())]
    summary = audit_summary(reports)
    assert summary["per_layer_ok"]
    assert summary["unexplained_total_mismatches"] == []
    assert summary["combined_grand_total"] == 11399171 + 2830337
    assert summary["combined_declared_total"] == 14497541
    assert round(summary["combined_declared_total"], -5) == GAN_TOTAL_APPROX


def test_audit_table_rendering():
    table = audit_architecture(discriminator_spec()).to_table()
    header = table.splitlines()[1].split()
    assert header[:6] == ["name", "K", "S", "C_in", "C_out", "#Parameters"]
    assert "conv2d_29" in table
    assert "268033 (known, documented)" in table
    assert "matches declared summary total (grand total)" in (
        audit_architecture(generator_spec()).to_table()
    )


def test_audit_reports_per_layer_mismatch():
    spec = ArchitectureSpec(
        network="toy",
        layers=(LayerSpec("bad", "convolution", 3, 1, 2, 2, False, "none", declared_params=1),),
    )
    report = audit_architecture(spec)
    assert not report.per_layer_ok
    assert report.mismatches == ["bad: computed 38, declared 1"]
    assert not audit_summary([report])["per_layer_ok"]


def test_scaled_specs_drop_declared_values():
    spec = generator_spec(width_divisor=16)
    assert spec.layer("conv2d").C_out == 4
    assert spec.layer("conv2d_23").C_out == 3
    assert spec.declared_total is None
    assert all(layer.declared_params is None for layer in spec.layers)
    assert discriminator_spec(width_divisor=16).layer("conv2d_29").C_out == 1


def test_spec_validation():
    with pytest.raises(ArchitectureError):
        LayerSpec("x", "pooling", 3, 1, 1, 1, False, "none")
    with pytest.raises(ArchitectureError):
        LayerSpec("x", "convolution", 0, 1, 1, 1, False, "none")
    with pytest.raises(ArchitectureError):
        generator_spec(upsample_mode="bilinear")
    with pytest.raises(ArchitectureError, match="Residual"):
        ArchitectureSpec(
            network="toy",
            layers=(LayerSpec("x", "convolution", 3, 2, 4, 4, False, "none"),),
            residual_pairs=((0, 0),),
        )


def test_declared_totals_lookup():
    assert get_declared_total("generator") == 11399171
    assert get_declared_total("discriminator") == 3098370
    with pytest.raises(ValueError, match="Unknown network"):
        get_declared_total("critic")
