"""Finite-difference verification of analytic gradients.

``grad_check`` compares ``backward()`` results against central differences
(f(x+h) - f(x-h)) / 2h. Both sides are evaluated in float64 regardless of
the package's float32 default: the vjp formulas under test are dtype
independent, and a float32 difference quotient at step 1e-3 carries enough
round-off to mask real defects near the 1e-3 tolerance.

Piecewise-linear ops (relu, clamp, max pooling) have no useful derivative
at their kinks, so the suites resample random inputs until every kink
reachable from the loss has a safety margin of several steps.
"""

import dataclasses
import time

import numpy as np

from . import tensor as T
from .errors import ContractError, ParamError
from .kernels import use_backend


@dataclasses.dataclass
class GradCheckReport:
    """Outcome of one gradient check.

    ``max_rel_error`` is the smallest relative tolerance at which every
    element would pass ``|a - n| <= atol + tol * max(|a|, |n|)``; elements
    whose discrepancy sits below the absolute floor contribute zero.
    """

    passed: bool
    max_rel_error: float
    n_checked: int
    failing: list
    step: float
    tolerance: float
    atol: float

    def __str__(self):
        state = "pass" if self.passed else "FAIL"
        return (f"{state}: max rel. error {self.max_rel_error:.3e} over {self.n_checked} elements "
                f"(step={self.step:g}, tol={self.tolerance:g}, {len(self.failing)} failing)")


def grad_check(f, x, step=1e-3, tolerance=1e-3, atol=1e-6, max_elements=None, rng=None):
    """Check df/dx for a scalar-valued ``f`` of one tensor.

    ``f`` must be evaluable repeatedly with identical results. ``x`` gives
    the point of evaluation; its data is copied to float64 and never
    mutated. With ``max_elements`` set, a random subset of that many
    elements is checked (seeded by ``rng``) instead of every element.
    """
    if not isinstance(x, T.Tensor):
        raise ParamError(f"grad_check: x must be a Tensor, got {type(x).__name__}")
    step = float(step)
    if step <= 0:
        raise ParamError(f"grad_check: step must be positive, got {step}")

    x64 = T.Tensor(x.data.astype(np.float64), requires_grad=True, dtype=np.float64)
    loss = f(x64)
    if not isinstance(loss, T.Tensor) or loss.numel() != 1:
        raise ContractError("grad_check: f must return a scalar Tensor")
    loss.backward()
    analytic = np.zeros(x64.shape, dtype=np.float64) if x64.grad is None else np.asarray(x64.grad, dtype=np.float64)

    n = x64.data.size
    if max_elements is not None and max_elements < n:
        picker = rng if rng is not None else np.random.default_rng(0)
        indices = np.sort(picker.choice(n, size=max_elements, replace=False))
    else:
        indices = np.arange(n)

    flat = x64.data.reshape(-1)
    numeric = np.zeros(len(indices), dtype=np.float64)
    with T.no_grad():
        for j, i in enumerate(indices):
            orig = flat[i]
            flat[i] = orig + step
            hi = f(x64).item()
            flat[i] = orig - step
            lo = f(x64).item()
            flat[i] = orig
            numeric[j] = (hi - lo) / (2.0 * step)

    a = analytic.reshape(-1)[indices]
    scale = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), atol)
    rel = np.maximum(np.abs(a - numeric) - atol, 0.0) / scale
    max_rel = float(rel.max()) if len(rel) else 0.0
    failing = []
    for j in np.flatnonzero(rel >= tolerance):
        idx = np.unravel_index(indices[j], x64.shape)
        failing.append((tuple(int(v) for v in idx), float(a[j]), float(numeric[j]), float(rel[j])))
    return GradCheckReport(
        passed=max_rel < tolerance,
        max_rel_error=max_rel,
        n_checked=len(indices),
        failing=failing,
        step=step,
        tolerance=tolerance,
        atol=atol,
    )


def check_inputs(f, tensors, **kwargs):
    """Run grad_check once per tensor, holding the others fixed.

    ``f`` takes the full list and returns a scalar. Returns the reports in
    input order.
    """
    reports = []
    for i in range(len(tensors)):
        def fi(xi, _i=i):
            args = list(tensors)
            args[_i] = xi
            return f(args)

        reports.append(grad_check(fi, tensors[i], **kwargs))
    return reports


# -- kink margins -------------------------------------------------------------


def _pool_top2_gap(node):
    """Smallest lead of each pooling window's max over its runner-up."""
    meta = node._meta
    parent = node._parents[0]
    kt, kh, kw = meta["window"]
    st, sh, sw = meta["stride"]
    pt, ph, pw = meta["padding"]
    xp = parent.data
    if pt or ph or pw:
        xp = np.pad(xp, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)), constant_values=-np.inf)
    b, c, tp, hp, wp = xp.shape
    to = (tp - kt) // st + 1
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    cols = np.empty((b, c, to, ho, wo, kt * kh * kw), dtype=np.float64)
    k = 0
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                cols[..., k] = xp[:, :, dt:dt + to * st:st, dh:dh + ho * sh:sh, dw:dw + wo * sw:sw]
                k += 1
    if cols.shape[-1] == 1:
        return np.inf
    part = np.partition(cols, cols.shape[-1] - 2, axis=-1)
    top, runner = part[..., -1], part[..., -2]
    gaps = top - runner
    finite = gaps[np.isfinite(gaps)]
    return float(finite.min()) if finite.size else np.inf


def kink_margin(loss):
    """Distance from the nearest non-differentiable point in the graph.

    Walks every node reachable from ``loss`` and returns the smallest
    margin found: |input| for relu, distance to either bound for clamp,
    and the max-vs-runner-up gap for max pooling. Infinite when the graph
    is smooth everywhere.
    """
    margin = np.inf
    for node in loss.graph_nodes():
        if node._op == "relu":
            margin = min(margin, float(np.abs(node._parents[0].data).min()))
        elif node._op == "clamp":
            p = node._parents[0].data
            lo, hi = node._meta["lo"], node._meta["hi"]
            margin = min(margin, float(np.abs(p - lo).min()), float(np.abs(p - hi).min()))
        elif node._op == "maxpool3d":
            margin = min(margin, _pool_top2_gap(node))
    return margin


def draw_safe_input(make_input, build_loss, rng, min_margin, tries=16):
    """Resample inputs until the loss graph clears ``min_margin`` at kinks.

    ``make_input(rng)`` draws a candidate (tensor or list of tensors) and
    ``build_loss(candidate)`` produces the scalar. Returns the best
    candidate seen if no draw clears the bar.
    """
    best, best_margin = None, -np.inf
    for _ in range(tries):
        candidate = make_input(rng)
        loss = build_loss(candidate)
        m = kink_margin(loss)
        if m > best_margin:
            best, best_margin = candidate, m
        if m >= min_margin:
            break
    return best


# -- check suites -------------------------------------------------------------


def _rand(rng, shape, lo=-1.0, hi=1.0):
    # float64 keeps difference quotients clear of forward round-off
    return T.Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _op_cases(rng):
    """One (name, f, x) triple per differentiable elementwise/shape op."""
    a = _rand(rng, (4, 5))
    b_away = T.Tensor(np.sign(rng.uniform(-1, 1, (4, 5))) * rng.uniform(0.5, 1.5, (4, 5)))
    pos = _rand(rng, (4, 5), 0.2, 2.0)
    vid = _rand(rng, (2, 3, 4, 5, 5))
    logits = _rand(rng, (3, 4), -2.0, 2.0)
    w = T.Tensor(rng.uniform(-1, 1, (3, 5)))
    sm_w = T.Tensor(rng.uniform(-1, 1, (3, 4)))
    drop_seed = int(rng.integers(1 << 31))

    cases = [
        ("add", lambda x: T.tensor_sum(T.mul(T.add(x, b_away), b_away)), a),
        ("add_scalar", lambda x: T.tensor_sum(T.pow(T.add(x, 1.5), 2.0)), a),
        ("sub", lambda x: T.tensor_sum(T.pow(T.sub(x, b_away), 2.0)), a),
        ("mul", lambda x: T.tensor_sum(T.mul(x, b_away)), a),
        ("mul_scalar", lambda x: T.tensor_sum(T.pow(T.mul(x, 0.7), 3.0)), a),
        ("div", lambda x: T.tensor_sum(T.div(x, b_away)), a),
        ("div_scalar", lambda x: T.tensor_sum(T.div(x, -2.5)), a),
        ("pow", lambda x: T.tensor_sum(T.pow(x, 3.0)), a),
        ("pow_frac", lambda x: T.tensor_sum(T.pow(x, 0.5)), pos),
        ("log", lambda x: T.tensor_sum(T.log(x)), pos),
        ("exp", lambda x: T.tensor_sum(T.exp(x)), a),
        ("negate", lambda x: T.tensor_sum(T.mul(T.negate(x), b_away)), a),
        ("sum_axis", lambda x: T.tensor_sum(T.pow(T.tensor_sum(x, axis=1), 2.0)), a),
        ("mean", lambda x: T.tensor_mean(T.pow(x, 2.0)), a),
        ("mean_axis", lambda x: T.tensor_sum(T.pow(T.tensor_mean(x, axis=0), 2.0)), a),
        ("concat", lambda x: T.tensor_sum(T.pow(T.concat([x, T.mul(x, 2.0)], axis=1), 2.0)), a),
        ("temporal_subsample", lambda x: T.tensor_sum(T.pow(T.temporal_subsample(x, 2), 2.0)), vid),
        ("linear", lambda x: T.tensor_sum(T.pow(T.linear(x, w, T.Tensor(np.zeros(3))), 2.0)), a),
        ("softmax", lambda x: T.tensor_sum(T.mul(T.softmax(x), sm_w)), logits),
        ("global_avg_pool", lambda x: T.tensor_sum(T.pow(T.global_avg_pool(x), 2.0)), vid),
        ("dropout", lambda x: T.tensor_sum(T.dropout(x, 0.4, np.random.default_rng(drop_seed))), a),
    ]
    return cases


def _kinked_op_cases(rng):
    """Cases needing a margin from their kinks, with resampling hooks."""
    weights = T.Tensor(rng.uniform(-1, 1, (4, 5)))

    def relu_loss(x):
        return T.tensor_sum(T.mul(T.relu(x), weights))

    def clamp_loss(x):
        return T.tensor_sum(T.mul(T.clamp(x, -0.5, 0.5), weights))

    def pool_loss(x):
        return T.tensor_sum(T.pow(T.maxpool3d(x, (2, 2, 2), stride=(1, 2, 2), padding=(0, 1, 1)), 2.0))

    cases = [
        ("relu", relu_loss, lambda r: _rand(r, (4, 5))),
        ("clamp", clamp_loss, lambda r: _rand(r, (4, 5))),
        ("maxpool3d", pool_loss, lambda r: _rand(r, (2, 2, 3, 4, 4))),
    ]
    return cases


def _conv_cases(rng):
    """conv3d checks for input, weight and bias at small extents."""
    x = _rand(rng, (2, 3, 4, 6, 6))
    w = _rand(rng, (4, 3, 3, 3, 3), -0.4, 0.4)
    b = _rand(rng, (4,))

    def loss(args):
        return T.tensor_sum(T.pow(T.conv3d(args[0], args[1], args[2], stride=(1, 2, 2), padding=(1, 1, 1)), 2.0))

    return loss, [x, w, b]


def _norm_cases(rng):
    x = _rand(rng, (2, 6, 3, 4, 4))
    gamma = _rand(rng, (6,), 0.5, 1.5)
    beta = _rand(rng, (6,))

    def loss(args):
        y = T.group_norm(args[0], args[1], args[2], num_groups=3)
        return T.tensor_sum(T.mul(y, T.pow(y, 2.0)))

    return loss, [x, gamma, beta]


def run_op_checks(seed, step=1e-3, tolerance=1e-3, max_elements=None):
    """Gradient-check every elementwise/shape/conv/norm op for one seed."""
    rng = np.random.default_rng(seed)
    results = []
    with use_backend("numpy"):
        for name, f, x in _op_cases(rng):
            results.append((name, grad_check(f, x, step=step, tolerance=tolerance, max_elements=max_elements, rng=rng)))
        for name, build_loss, make in _kinked_op_cases(rng):
            x = draw_safe_input(make, build_loss, rng, min_margin=10 * step)
            results.append((name, grad_check(build_loss, x, step=step, tolerance=tolerance, max_elements=max_elements, rng=rng)))
        conv_loss, conv_args = _conv_cases(rng)
        for label, rep in zip(("conv3d_input", "conv3d_weight", "conv3d_bias"),
                              check_inputs(conv_loss, conv_args, step=step, tolerance=tolerance, max_elements=64, rng=rng)):
            results.append((label, rep))
        norm_loss, norm_args = _norm_cases(rng)
        for label, rep in zip(("group_norm_input", "group_norm_gamma", "group_norm_beta"),
                              check_inputs(norm_loss, norm_args, step=step, tolerance=tolerance, max_elements=64, rng=rng)):
            results.append((label, rep))
    return results


def run_layer_checks(seed, step=1e-4, tolerance=1e-3):
    """Gradient-check composite layers and both losses for one seed.

    The default step is finer than the elementwise default: these graphs
    contain many relu units, and in float64 a smaller step keeps the
    difference quotient clear of their kinks at no round-off cost.
    """
    from . import losses
    from .layers import BasicBlock3d, BottleneckBlock3d, GroupNorm

    rng = np.random.default_rng(seed)
    results = []
    with use_backend("numpy"):
        gn = GroupNorm(6)
        x = _rand(rng, (2, 6, 2, 4, 4))
        results.append(("group_norm_layer", grad_check(
            lambda t: T.tensor_sum(T.pow(gn(t), 2.0)), x,
            step=step, tolerance=tolerance, max_elements=48, rng=rng)))

        block = BasicBlock3d(4, 4, temporal_kernel=3, stride=1, rng=rng)

        def block_loss(t):
            return T.tensor_sum(T.pow(block(t), 2.0))

        xb = draw_safe_input(lambda r: _rand(r, (1, 4, 3, 5, 5)), block_loss, rng, min_margin=10 * step)
        results.append(("basic_block", grad_check(block_loss, xb, step=step, tolerance=tolerance, max_elements=48, rng=rng)))

        bott = BottleneckBlock3d(4, 2, temporal_kernel=3, stride=2, rng=rng)

        def bott_loss(t):
            return T.tensor_sum(T.pow(bott(t), 2.0))

        xo = draw_safe_input(lambda r: _rand(r, (1, 4, 3, 6, 6)), bott_loss, rng, min_margin=10 * step)
        results.append(("bottleneck_block", grad_check(bott_loss, xo, step=step, tolerance=tolerance, max_elements=48, rng=rng)))

        labels = np.array([0, 1, 0], dtype=np.int64)
        logits = _rand(rng, (3, 2), -1.5, 1.5)
        results.append(("focal_loss", grad_check(
            lambda t: losses.focal_loss(T.softmax(t), labels), logits,
            step=step, tolerance=tolerance)))
        results.append(("cross_entropy", grad_check(
            lambda t: losses.cross_entropy(T.softmax(t), labels), logits,
            step=step, tolerance=tolerance)))
    return results


def check_parameters(loss_fn, named_params, step=1e-3, tolerance=1e-3, atol=1e-6,
                     elements_per_param=2, max_params=None, rng=None):
    """Finite-difference a sample of elements of each named parameter.

    ``loss_fn()`` evaluates the scalar loss from the parameters' current
    values. A single backward supplies the analytic side; each sampled
    element is then perturbed in place for the central difference. All
    parameters are promoted to float64 for the duration of the check and
    restored afterwards. With ``max_params`` set, only a random subset of
    the parameter tensors is probed (all still get the analytic backward).

    Elements that disagree at the base step are re-estimated at smaller
    steps before being reported: deep graphs are full of relu and max-pool
    kinks, and a probe that straddles one contaminates only the numeric
    side. Shrinking the step moves the quotient off the kink, while a
    genuinely wrong analytic gradient keeps failing at every step.
    """
    params = dict(named_params)
    names = sorted(params)
    saved = {k: (params[k].data, params[k].grad) for k in names}
    picker = rng if rng is not None else np.random.default_rng(0)
    probe = names
    if max_params is not None and max_params < len(names):
        probe = [names[i] for i in np.sort(picker.choice(len(names), size=max_params, replace=False))]
    try:
        for k in names:
            params[k].data = params[k].data.astype(np.float64)
            params[k].grad = None
        loss = loss_fn()
        loss.backward()

        def rel_of(a_val, n_val):
            scale = max(abs(a_val), abs(n_val), atol)
            return max(abs(a_val - n_val) - atol, 0.0) / scale

        analytic, numeric, labels = [], [], []
        for k in probe:
            p = params[k]
            n = p.numel()
            picks = np.sort(picker.choice(n, size=min(elements_per_param, n), replace=False))
            grads = np.zeros(n) if p.grad is None else np.asarray(p.grad, dtype=np.float64).reshape(-1)
            flat = p.data.reshape(-1)
            with T.no_grad():
                for i in picks:
                    orig = flat[i]

                    def central(h):
                        flat[i] = orig + h
                        hi = loss_fn().item()
                        flat[i] = orig - h
                        lo = loss_fn().item()
                        flat[i] = orig
                        return (hi - lo) / (2.0 * h)

                    est = central(step)
                    h = step
                    while rel_of(grads[i], est) >= tolerance and h > step / 100.0:
                        h /= 8.0
                        est = central(h)
                    numeric.append(est)
                    analytic.append(grads[i])
                    labels.append((k, int(i)))
    finally:
        for k in names:
            params[k].data, params[k].grad = saved[k]

    a = np.asarray(analytic)
    n_ = np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n_)), atol)
    rel = np.maximum(np.abs(a - n_) - atol, 0.0) / scale
    max_rel = float(rel.max()) if len(rel) else 0.0
    failing = [(labels[j], float(a[j]), float(n_[j]), float(rel[j])) for j in np.flatnonzero(rel >= tolerance)]
    return GradCheckReport(passed=max_rel < tolerance, max_rel_error=max_rel, n_checked=len(a),
                           failing=failing, step=step, tolerance=tolerance, atol=atol)


def run_model_check(seed, step=1e-5, tolerance=1e-3, elements_per_param=1, max_params=32):
    """Gradient-check a random sample of parameters of a tiny network.

    Builds the smallest sensible three-pathway model, runs focal loss on a
    random clip, and finite-differences sampled elements of a per-seed
    random subset of parameter tensors; across many seeds the subsets
    cover the whole network. The very small step is safe in float64 and
    keeps perturbations clear of relu kinks deep in the graph.
    """
    from . import losses
    from .model import ModelConfig, MultiPathNet

    rng = np.random.default_rng(seed)
    cfg = ModelConfig(depth=18, slow_width=8, beta=0.25, regular_width=8, alpha=4,
                      wiring="regular_to_fast")
    with use_backend("numpy"):
        net = MultiPathNet(cfg, rng=rng)
        clip = T.Tensor(rng.uniform(0.05, 0.95, (1, 1, 8, 32, 32)).astype(np.float32))
        labels = np.array([0], dtype=np.int64)

        def loss_fn():
            return losses.focal_loss(T.softmax(net(clip)), labels)

        report = check_parameters(loss_fn, net.named_parameters(), step=step, tolerance=tolerance,
                                  elements_per_param=elements_per_param, max_params=max_params, rng=rng)
    return [("tiny_model_params", report)]


def run_suite(scope, seeds=20, step=None, tolerance=1e-3):
    """Run a named scope of checks over several seeds.

    ``step=None`` keeps each runner's own default (coarser for smooth
    elementwise ops, finer for deep graphs). Returns ``(all_passed,
    lines, elapsed_seconds)`` where each line is a printable per-check
    summary string.
    """
    runners = {"ops": run_op_checks, "layers": run_layer_checks, "model": run_model_check}
    if scope not in runners:
        raise ParamError(f"unknown gradcheck scope {scope!r}; choose from {sorted(runners)}")
    runner = runners[scope]
    kwargs = {"tolerance": tolerance}
    if step is not None:
        kwargs["step"] = step
    t0 = time.perf_counter()
    lines = []
    all_passed = True
    worst = {}
    for seed in range(seeds):
        for name, report in runner(seed, **kwargs):
            prev = worst.get(name)
            if prev is None or report.max_rel_error > prev.max_rel_error:
                worst[name] = report
            if not report.passed:
                all_passed = False
                lines.append(f"seed {seed} {name}: {report}")
    for name in sorted(worst):
        lines.append(f"{name}: worst over {seeds} seeds: {worst[name]}")
    return all_passed, lines, time.perf_counter() - t0
