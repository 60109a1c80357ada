import numpy as np
import pytest

from pcnn.checks import fps_oracle, pool_oracle
from pcnn.extension import ExtendedFunction, extend_eval
from pcnn.nn import (
    Adam,
    LayerSpec,
    Network,
    ShapeError,
    build_network,
    cosine_loss,
    infer_shapes,
    load_checkpoint,
    save_checkpoint,
    segment_max,
    softmax_cross_entropy,
)
from pcnn.nn.layers import BatchNorm, PoolMax
from pcnn.rbf import RbfBasis, omega_practical


def features_for(clouds):
    return np.stack([np.concatenate([np.ones((len(c), 1)), c], axis=1) for c in clouds])


def small_net(arch="classification", precision="f64", seed=0, **extra):
    if arch == "classification":
        hyper = dict(in_points=32, pool_points=(8, 1), channels=(4, 6), dense=(5,), classes=3, dropout=0.0)
    else:
        hyper = dict(in_points=32, pool_points=(12, 4), channels=(3, 4), decoder_channels=(4, 3))
    hyper.update(extra)
    return Network(arch, hyper, seed=seed, precision=precision)


def fd_check(net, loss_of_output, feats, plans, rng, entries=5, h=1e-6):
    out, tape = net.forward(feats, plans, train=True)
    _, grad = loss_of_output(out)
    net.zero_grad()
    net.backward(grad, tape)
    analytic = {k: v.copy() for k, v in net.named_grads().items()}
    worst = 0.0
    for name, param in net.named_params().items():
        flat = param.reshape(-1).copy()
        pick = rng.choice(flat.size, size=min(entries, flat.size), replace=False)
        num = []
        for idx in pick:
            vals = []
            for sign in (1, -1):
                trial = flat.copy()
                trial[idx] += sign * h
                net.set_param(name, trial)
                vals.append(loss_of_output(net.forward(feats, plans, train=True)[0])[0])
            net.set_param(name, flat)
            num.append((vals[0] - vals[1]) / (2 * h))
        num = np.array(num)
        a = analytic[name].reshape(-1)[pick]
        worst = max(worst, np.linalg.norm(a - num) / max(np.linalg.norm(num), np.linalg.norm(a), 1e-8))
    return worst


class TestPooling:
    def test_identity_partition(self, rng):
        f = rng.normal(size=(6, 3))
        out, _ = segment_max(f, np.arange(6), 6)
        assert np.array_equal(out, f)

    def test_two_points_one_cell(self):
        out, arg = segment_max(np.array([[1.0, 5.0], [3.0, 2.0]]), np.array([0, 0]), 1)
        assert out.tolist() == [[3.0, 5.0]] and arg.tolist() == [[1, 0]]

    def test_ties_lowest_index(self):
        _, arg = segment_max(np.array([[2.0], [2.0], [1.0]]), np.array([0, 0, 0]), 1)
        assert arg.tolist() == [[0]]

    def test_random_matches_oracle(self, rng):
        for _ in range(20):
            f = rng.normal(size=(30, 4))
            assign = np.concatenate([np.arange(7), rng.integers(0, 7, 23)])
            out, _ = segment_max(f, assign, 7)
            assert np.array_equal(out, pool_oracle(f, assign, 7))

    def test_empty_cell_rejected(self):
        with pytest.raises(ValueError):
            segment_max(np.zeros((2, 1)), np.array([0, 0]), 2)

    def test_gradient_goes_to_one_element(self, rng):
        layer = PoolMax()
        x = rng.normal(size=(1, 20, 3))
        assign = np.concatenate([np.arange(5), rng.integers(0, 5, 15)])
        rec = {}
        layer.forward(x, [dict(assignment=assign, n_cells=5)], True, rec)
        g = rng.normal(size=(1, 5, 3))
        gx = layer.backward(g, None, rec)
        for cell in range(5):
            for ch in range(3):
                column = gx[0, assign == cell, ch]
                assert np.count_nonzero(column) == 1 and column.sum() == g[0, cell, ch]


class TestLosses:
    def test_uniform_logits(self):
        loss, _ = softmax_cross_entropy(np.zeros((3, 5)), np.array([0, 4, 2]))
        assert loss == pytest.approx(np.log(5))

    def test_cross_entropy_gradient(self, rng):
        z, y = rng.normal(size=(4, 3)), np.array([0, 2, 1, 1])
        _, g = softmax_cross_entropy(z, y)
        h = 1e-6
        for idx in np.ndindex(z.shape):
            e = np.zeros_like(z)
            e[idx] = h
            num = (softmax_cross_entropy(z + e, y)[0] - softmax_cross_entropy(z - e, y)[0]) / (2 * h)
            assert g[idx] == pytest.approx(num, abs=1e-8)

    def test_cosine_extremes(self, rng):
        t = rng.normal(size=(10, 3))
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        assert cosine_loss(t, t)[0] == pytest.approx(0.0, abs=1e-11)
        assert cosine_loss(-t, t)[0] == pytest.approx(2.0, abs=1e-11)

    def test_cosine_zero_prediction_is_finite(self):
        loss, grad = cosine_loss(np.zeros((2, 3)), np.array([[1.0, 0, 0], [0, 1.0, 0]]))
        assert loss == 1.0 and np.all(np.isfinite(grad))

    def test_cosine_gradient(self, rng):
        p, t = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        _, g = cosine_loss(p, t)
        h = 1e-6
        for idx in np.ndindex(p.shape):
            e = np.zeros_like(p)
            e[idx] = h
            num = (cosine_loss(p + e, t)[0] - cosine_loss(p - e, t)[0]) / (2 * h)
            assert g[idx] == pytest.approx(num, abs=1e-8)


class TestAdam:
    def test_zero_gradient(self):
        opt = Adam()
        p = {"w": np.array([1.0, -2.0])}
        out = opt.step(p, {"w": np.zeros(2)})
        assert np.array_equal(out["w"], p["w"]) and opt.t == 1

    def test_constant_gradient_step_size(self):
        opt = Adam(lr=0.01)
        p = {"w": np.array([0.0])}
        for _ in range(200):
            prev = p["w"].copy()
            p = opt.step(p, {"w": np.array([-3.0])})
        assert p["w"][0] - prev[0] == pytest.approx(0.01, rel=1e-6)

    def test_deterministic(self, rng):
        grads = [rng.normal(size=(3, 2)) for _ in range(50)]

        def run():
            opt = Adam()
            p = {"w": np.zeros((3, 2))}
            for g in grads:
                p = opt.step(p, {"w": g})
            return p["w"]

        assert np.array_equal(run(), run())

    def test_decay_schedule(self):
        opt = Adam(lr=1e-3, decay_rate=0.7, decay_every=20)
        opt.set_epoch(19)
        assert opt.lr == pytest.approx(1e-3)
        opt.set_epoch(45)
        assert opt.lr == pytest.approx(1e-3 * 0.49)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Adam().step({"w": np.zeros(2)}, {"w": np.zeros(3)})


class TestBatchNorm:
    def test_eval_is_affine(self, rng):
        bn = BatchNorm(3, np.float64)
        bn.forward(rng.normal(size=(2, 10, 3)) * 4 + 1, None, True, {})
        bn.params["gamma"] = rng.normal(size=3)
        bn.params["beta"] = rng.normal(size=3)
        x, y = rng.normal(size=(1, 6, 3)), rng.normal(size=(1, 6, 3))
        fx, fy = (bn.forward(v, None, False, {}) for v in (x, y))
        mixed = bn.forward(0.3 * x + 0.7 * y, None, False, {})
        assert np.allclose(mixed, 0.3 * fx + 0.7 * fy, atol=1e-12)
        before = bn.running_mean.copy()
        bn.forward(x * 100, None, False, {})
        assert np.array_equal(bn.running_mean, before)

    def test_first_batch_sets_statistics(self, rng):
        bn = BatchNorm(2, np.float64)
        x = rng.normal(size=(3, 8, 2)) * 0.01 + 5
        bn.forward(x, None, True, {})
        assert np.allclose(bn.running_mean, x.mean(axis=(0, 1)))
        assert np.allclose(bn.running_var, x.var(axis=(0, 1)))
        x2 = rng.normal(size=(3, 8, 2))
        bn.forward(x2, None, True, {})
        assert np.allclose(bn.running_mean, 0.9 * x.mean(axis=(0, 1)) + 0.1 * x2.mean(axis=(0, 1)))


class TestArchitectures:
    def test_reference_classification_chain(self):
        hyper = dict(in_points=1024, pool_points=(256, 64, 1), channels=(64, 256, 1024),
                     dense=(512, 256), classes=40, in_channels=1)
        specs = build_network("classification", hyper)
        stages = infer_shapes(specs, 1024, 1)
        convs = [(stages[t].points, stages[t + 1].channels) for t, s in enumerate(specs) if s.kind == "pc_conv"]
        pools = [stages[t + 1].points for t, s in enumerate(specs) if s.kind == "pool_max"]
        assert convs == [(1024, 64), (256, 256), (64, 1024)]
        assert pools == [256, 64, 1]
        assert stages[-1].channels == 40 and stages[-1].points is None
        kinds = [s.kind for s in specs]
        assert kinds[:4] == ["pc_conv", "batch_norm", "relu", "pool_max"]
        assert kinds[-7:] == ["dense", "relu", "dropout", "dense", "relu", "dropout", "dense"]

    def test_normals_output_width(self):
        specs = build_network("normals", None)
        stages = infer_shapes(specs, 512, 4)
        assert stages[-1].channels == 3 and stages[-1].points == 512
        assert sum(s.kind == "concat_skip" for s in specs) == 2
        assert sum(s.kind == "upsample" for s in specs) == 2

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            infer_shapes([LayerSpec("dense", channels=3)], 16, 1)
        with pytest.raises(ShapeError):
            infer_shapes([LayerSpec("pool_max", points=32)], 16, 1)
        with pytest.raises(ShapeError):
            build_network("classification", dict(pool_points=(4,), channels=(2, 3)))
        with pytest.raises(ValueError):
            LayerSpec("softmax")

    @pytest.mark.parametrize("arch", ["classification", "normals"])
    def test_no_dead_parameters(self, arch, rng):
        net = small_net(arch)
        clouds = [rng.normal(size=(32, 3)) * 0.3 for _ in range(2)]
        out, tape = net.forward(features_for(clouds), net.plan(clouds), train=True)
        net.zero_grad()
        net.backward(rng.normal(size=out.shape), tape)
        for name, g in net.named_grads().items():
            assert np.any(g != 0), name


class TestConvBlock:
    def test_output_points_follow_fps(self, rng):
        net = small_net()
        pts = rng.normal(size=(32, 3))
        plan = net.plan([pts])[0]
        expect = fps_oracle(pts, 8, 0)
        assert np.array_equal(plan.clouds[4], pts[expect])

    def test_negative_preactivations_vanish(self, rng):
        net = small_net()
        pts = rng.normal(size=(32, 3)) * 0.3
        plan = net.plan([pts])
        net.layers[1].params["beta"] = np.full(4, -1e6)
        _, tape = net.forward(features_for([pts]), plan)
        assert np.all(tape.records[3]["argmax"][0] >= 0)
        out = net.layers[2].forward(np.full((1, 32, 4), -1.0), None, False, {})
        assert np.all(out == 0)


class TestDeconv:
    def test_upsample_matches_extension(self, rng):
        net = small_net("normals")
        pts = rng.normal(size=(32, 3)) * 0.3
        plan = net.plan([pts])[0]
        t = next(i for i, s in enumerate(net.specs) if s.kind == "upsample")
        src, dst = plan.clouds[t], plan.clouds[t + 1]
        f = rng.normal(size=(len(src), 2))
        sigma = 1 / np.sqrt(len(src))
        basis = RbfBasis.gaussian(sigma)
        ext = ExtendedFunction(src, f, omega_practical(src, basis, 6 * sigma), basis)
        assert np.allclose(plan.per_layer[t]["matrix"] @ f, extend_eval(ext, dst, 6 * sigma), atol=1e-12)

    def test_upsample_constant_on_own_cloud(self):
        ax = np.arange(9.0) * 0.1
        z, y, x = np.meshgrid(ax, ax, ax, indexing="ij")
        pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
        basis = RbfBasis.gaussian(0.1)
        ext = ExtendedFunction(pts, np.ones((len(pts), 1)), omega_practical(pts, basis), basis)
        # the centre is only four widths from the boundary, hence the loose bound
        assert extend_eval(ext, pts[[364]])[0, 0] == pytest.approx(1.0, abs=1e-2)

    def test_zero_features_stay_zero(self, rng):
        net = small_net("normals")
        pts = rng.normal(size=(32, 3)) * 0.3
        plan = net.plan([pts])
        t = next(i for i, s in enumerate(net.specs) if s.kind == "upsample")
        n_src = len(plan[0].clouds[t])
        up = net.layers[t].forward(np.zeros((1, n_src, 4)), [plan[0].per_layer[t]], False, {})
        conv = net.layers[t + 1].forward(up, [plan[0].per_layer[t + 1]], False, {})
        assert np.all(conv == 0)

    def test_normals_gradient(self, rng):
        net = small_net("normals")
        clouds = [rng.normal(size=(32, 3)) * 0.3 for _ in range(2)]
        target = rng.normal(size=(2, 32, 3))
        target /= np.linalg.norm(target, axis=-1, keepdims=True)
        err = fd_check(net, lambda out: cosine_loss(out, target), features_for(clouds), net.plan(clouds), rng)
        assert err <= 1e-6


class TestNetwork:
    def test_classification_gradient(self, rng):
        net = small_net()
        clouds = [rng.normal(size=(32, 3)) * 0.3 for _ in range(2)]
        labels = np.array([0, 2])
        err = fd_check(net, lambda out: softmax_cross_entropy(out, labels), features_for(clouds),
                       net.plan(clouds), rng)
        assert err <= 1e-6

    def test_classification_gradient_single_precision(self, rng):
        net = small_net(precision="f32")
        clouds = [rng.normal(size=(32, 3)) * 0.3 for _ in range(2)]
        labels = np.array([1, 0])
        # f32 parameters: larger step so the perturbation survives rounding
        err = fd_check(net, lambda out: softmax_cross_entropy(out, labels), features_for(clouds),
                       net.plan(clouds), rng, h=1e-3)
        assert err <= 1e-4

    def test_permutation_invariance(self, rng):
        net = small_net()
        pts = rng.normal(size=(32, 3)) * 0.3
        net.forward(features_for([pts]), net.plan([pts]), train=True)
        perm = rng.permutation(32)
        inv = np.argsort(perm)
        a, _ = net.forward(features_for([pts]), net.plan([pts]))
        b, _ = net.forward(features_for([pts[perm]]), net.plan([pts[perm]], fps_starts=[inv[0]]))
        assert np.max(np.abs(a - b)) <= 1e-10

    def test_bad_input_shape(self, rng):
        net = small_net()
        pts = rng.normal(size=(32, 3))
        with pytest.raises(ShapeError):
            net.forward(np.ones((1, 32, 2)), net.plan([pts]))

    def test_same_seed_same_parameters(self):
        a, b = small_net(seed=4), small_net(seed=4)
        for name, p in a.named_params().items():
            assert np.array_equal(p, b.named_params()[name])


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        net = small_net(precision="f32")
        clouds = [rng.normal(size=(32, 3)) * 0.3 for _ in range(2)]
        plans = net.plan(clouds)
        out, tape = net.forward(features_for(clouds), plans, train=True)
        net.zero_grad()
        net.backward(rng.normal(size=out.shape), tape)
        opt = Adam()
        for name, value in opt.step(net.named_params(), net.named_grads()).items():
            net.set_param(name, value)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, net, opt)
        assert path.read_bytes().startswith(b"PCNNCKPT1 classification ")
        opt2 = Adam()
        back = load_checkpoint(path, opt2)
        for name, p in net.named_params().items():
            assert np.array_equal(back.named_params()[name], p)
        assert opt2.t == 1 and set(opt2.m) == set(opt.m)
        a, _ = net.forward(features_for(clouds), plans)
        b, _ = back.forward(features_for(clouds), plans)
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTACKPT x 1\n")
        with pytest.raises(ValueError):
            load_checkpoint(path)
