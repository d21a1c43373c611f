import numpy as np
import pytest
import torch

from gblab.networks import (
    DC_DECODER_CONVS, DC_ENCODER_CONVS, Activation, ArchitectureId, ConvLayerSpec,
    DCDecoder, DCEncoder, SBDDecoder, SBDEncoder, broadcast_grid, build, glu, shape_trace,
)

SBD_ENCODER_TRACE = [(32, 32, 32), (32, 16, 16), (64, 8, 8), (64, 4, 4), (256,)]
SBD_DECODER_TRACE = [(32, 70, 70), (32, 68, 68), (32, 66, 66), (32, 64, 64), (3, 64, 64)]
DC_ENCODER_TRACE = [(32, 64, 64), (32, 32, 32), (64, 32, 32), (64, 16, 16), (64, 16, 16)]
DC_DECODER_TRACE = [(64, 16, 16), (64, 16, 16), (32, 32, 32), (32, 32, 32), (32, 64, 64), (32, 64, 64)]


def test_glu_zero_gate_halves():
    a = torch.randn(2, 3, 4, 4)
    out = glu(torch.cat([a, torch.zeros_like(a)], dim=1))
    assert torch.allclose(out, 0.5 * a)


def test_glu_saturated_gate_passes_through():
    a = torch.randn(2, 3, 4, 4, dtype=torch.float64)
    out = glu(torch.cat([a, torch.full_like(a, 1e3)], dim=1))
    assert torch.allclose(out, a)


def test_glu_matches_elementwise_oracle():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 4, 3, 3))
    out = glu(torch.from_numpy(x)).numpy()
    a, b = x[:, :2], x[:, 2:]
    assert np.allclose(out, a / (1 + np.exp(-b)), atol=1e-12)


def test_glu_odd_channels_rejected():
    with pytest.raises(ValueError):
        glu(torch.zeros(1, 3, 2, 2))


def test_conv_spec_rejects_odd_glu_channels():
    with pytest.raises(ValueError):
        ConvLayerSpec(4, 63, 5, 1, 2, activation=Activation.BN_GLU)
    with pytest.raises(ValueError):
        ConvLayerSpec(0, 64, 5, 1, 2)


def test_broadcast_grid_shape_and_coords():
    z = torch.randn(2, 1)
    g = broadcast_grid(z, 72, 72)
    assert g.shape == (2, 3, 72, 72)
    assert torch.all(g[:, 0] == z.view(2, 1, 1))
    assert g[0, 1, 0, 0] == -1 and g[0, 2, 0, 0] == -1
    assert g[0, 1, -1, -1] == 1 and g[0, 2, -1, -1] == 1
    # channel 1 ramps along height only, channel 2 along width only
    assert torch.all(g[0, 1, :, 0:1] == g[0, 1])
    assert torch.all(g[0, 2, 0:1, :] == g[0, 2])


def test_broadcast_grid_center_is_zero():
    g = broadcast_grid(torch.zeros(1, 2), 9, 9)
    assert g[0, 2, 4, 4] == 0 and g[0, 3, 4, 4] == 0


def test_shape_traces_match_tables():
    assert shape_trace(SBDEncoder(64))[:-1] == SBD_ENCODER_TRACE
    assert shape_trace(SBDEncoder(64))[-1] == (128,)
    tr = shape_trace(SBDDecoder(4))
    assert tr[0] == (6, 72, 72) and tr[1:] == SBD_DECODER_TRACE
    tr = shape_trace(DCEncoder(8))
    assert tr[:-1] == DC_ENCODER_TRACE and tr[-1] == (16,)
    tr = shape_trace(DCDecoder(4, 3))
    assert tr[:-1] == DC_DECODER_TRACE and tr[-1] == (3, 64, 64)
    assert shape_trace(DCDecoder(4, 1))[-1] == (1, 64, 64)


def test_dc_pre_glu_channel_counts():
    assert [s.out_channels for s in DC_ENCODER_CONVS] == [64, 64, 128, 128, 128]
    assert [s.post_channels for s in DC_ENCODER_CONVS] == [32, 32, 64, 64, 64]
    assert [s.post_channels for s in DC_DECODER_CONVS[:-1]] == [64, 32, 32, 32, 32]
    assert [s.stride for s in DC_DECODER_CONVS[:-1]] == [1, 2, 1, 2, 1]


@pytest.mark.parametrize("latent", [1, 64])
def test_sbd_encode_latent_shapes(latent):
    q = SBDEncoder(latent).eval()(torch.zeros(2, 4, 64, 64))
    assert q.mean.shape == (2, latent) and q.log_var.shape == (2, latent)


def test_dc_encode_latent_shape():
    q = DCEncoder(8).eval()(torch.rand(3, 4, 64, 64))
    assert q.mean.shape == (3, 8)


@pytest.mark.parametrize("net", [SBDEncoder(4), DCEncoder(4)])
def test_encoders_reject_wrong_input(net):
    with pytest.raises(ValueError):
        net(torch.zeros(1, 3, 64, 64))
    with pytest.raises(ValueError):
        net(torch.zeros(1, 4, 32, 32))


def test_dc_decoder_out_channels_precondition():
    with pytest.raises(ValueError):
        DCDecoder(4, out_channels=2)


def test_sbd_decode_constant_z_gives_identical_outputs():
    dec = SBDDecoder(4).eval()
    z = torch.randn(1, 4).expand(3, 4)
    out = dec(z)
    assert out.shape == (3, 3, 64, 64)
    assert torch.equal(out[0], out[1]) and torch.equal(out[1], out[2])


def test_sbd_decode_batch_permutation_covariance():
    dec = SBDDecoder(3).eval()
    z = torch.randn(4, 3)
    perm = torch.tensor([2, 0, 3, 1])
    assert torch.allclose(dec(z)[perm], dec(z[perm]), atol=1e-6)


def test_batchnorm_eval_independent_of_batch_composition():
    enc = DCEncoder(4)
    enc(torch.rand(8, 4, 64, 64))  # populate running stats
    enc.eval()
    x = torch.rand(3, 4, 64, 64)
    alone = enc(x[:1]).mean
    mixed = enc(torch.cat([x[:1], torch.rand(5, 4, 64, 64)])).mean[:1]
    assert torch.allclose(alone, mixed, atol=1e-5)


def test_build_dispatch():
    assert isinstance(build(ArchitectureId.SBD_ENCODER, 2), SBDEncoder)
    assert isinstance(build("SBD_DECODER", 2), SBDDecoder)
    assert isinstance(build("DC_ENCODER", 2, 3), DCEncoder)
    assert build("DC_DECODER", 2, 1).out_channels == 1


def _projection_gradcheck(net, inp, n_params=6, step=1e-6, tol=1e-3, seed=0):
    """Finite-difference check of a random scalar projection of the output."""
    net = net.double()

    def out():
        o = net(inp)
        return o if torch.is_tensor(o) else torch.cat([o.mean, o.log_var], dim=-1)

    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        w = torch.randn(out().shape, generator=g, dtype=torch.float64)

    def f():
        return (out() * w).sum()

    params = [p for p in net.parameters() if p.requires_grad]
    net.zero_grad()
    f().backward()
    rng = np.random.default_rng(seed)
    for _ in range(n_params):
        p = params[rng.integers(len(params))]
        i = int(rng.integers(p.numel()))
        an = p.grad.view(-1)[i].item()
        with torch.no_grad():
            old = p.view(-1)[i].item()
            p.view(-1)[i] = old + step
            hi = f().item()
            p.view(-1)[i] = old - step
            lo = f().item()
            p.view(-1)[i] = old
        fd = (hi - lo) / (2 * step)
        assert abs(fd - an) <= tol * max(abs(fd), abs(an)) + 1e-7, (fd, an)


@pytest.mark.parametrize("name", ["sbd_enc", "sbd_dec", "dc_enc", "dc_dec"])
def test_architectures_differentiable(name):
    torch.manual_seed(1)
    x4 = torch.rand(2, 4, 64, 64, dtype=torch.float64)
    z = torch.randn(2, 3, dtype=torch.float64)
    net, inp = {
        "sbd_enc": (SBDEncoder(3), x4),
        "sbd_dec": (SBDDecoder(3), z),
        "dc_enc": (DCEncoder(3), x4),
        "dc_dec": (DCDecoder(3), z),
    }[name]
    _projection_gradcheck(net, inp)
