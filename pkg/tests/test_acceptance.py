"""
Acceptance-scale runs: Yoccoz profiles, transition relations, Fibonacci scaling,
piece nesting, angle control, conjugacy distortion and reproducible output.
"""

import json
import math

import numpy as np
import pytest

from puzzlekit.cli import main
from puzzlekit.complex_trace import power_pullback, vertex_angles
from puzzlekit.conjugacy import build_conjugacy, order_mismatch_experiment, qs_constant
from puzzlekit.errors import ChainBroken, NoReturn, NotDiffeomorphic
from puzzlekit.families import create_parabolic_germ, create_quadratic_map, create_sine_map
from puzzlekit.geometry import cross_ratio_distortion, length_sum, yoccoz_profile
from puzzlekit.nests import (
    critical_start_piece,
    detect_cascades,
    enhanced_cascade_nest,
    long_cascade_threshold,
    principal_nest,
)
from puzzlekit.orbits import fundamental_domain_chain, parabolic_escape_rate
from puzzlekit.precision import Precision, bracketed_root
from puzzlekit.puzzle import (
    PuzzleCache,
    create_admissible_set,
    fibonacci_parameter_search,
    preimage_lattice,
    puzzle_pieces,
)

SADDLE_NODE = -1.75


def alpha_piece(c):
    """(alpha, -alpha) around 0 for x^2 + c"""
    alpha = 0.5 * (1.0 - math.sqrt(1.0 - 4.0 * c))
    return (alpha, -alpha)


def cascade_nests(spec, start, depth, critical_index=0):
    """Enhanced nests above every long cascade of the principal nest from start"""
    nest = principal_nest(spec, start, critical_index, depth=depth, truncate=True)
    threshold = long_cascade_threshold(len(spec.critical_points))
    found = []
    for cascade in detect_cascades(nest, spec, critical_index):
        if cascade.length < threshold:
            continue
        outer = next((r for r in nest if r.level == cascade.start_level - 1), None)
        base = outer.piece.as_tuple() if outer is not None else start
        try:
            found.append(enhanced_cascade_nest(spec, base, cascade, critical_index))
        except (ChainBroken, NoReturn):
            continue
    return found


@pytest.fixture(scope="module")
def fibonacci_quadratic():
    report = fibonacci_parameter_search(2, 10, Precision(bits=128))
    return create_quadratic_map(report.parameter)


@pytest.fixture(scope="module")
def saddle_node_passage():
    """Longest cascade of x^2 + c at c 1e-7 above the period-3 saddle-node"""
    c = SADDLE_NODE + 1e-7
    spec = create_quadratic_map(c)
    nest = principal_nest(spec, alpha_piece(c), depth=2500, truncate=True)
    cascade = max(detect_cascades(nest, spec), key=lambda k: k.length)
    return spec, cascade


@pytest.mark.slow
class TestYoccozBounds:
    """Test fundamental domains of a long saddle-node passage"""

    def test_cascade_is_long(self, saddle_node_passage):
        """Test that the passage is a period-3 cascade of length at least 50"""
        _, cascade = saddle_node_passage
        assert cascade.return_time == 3
        assert cascade.length >= 50

    @pytest.mark.parametrize("sigma", [1e-3, 1e-4, 1e-5])
    def test_normalised_lengths_comparable(self, saddle_node_passage, sigma):
        """Test that |D_i| min(i, a - i)^2 / |I| varies by at most 20 over 5 <= i <= a - 5"""
        spec, cascade = saddle_node_passage
        profile = yoccoz_profile(spec, cascade, sigma=sigma)
        assert profile.window == (5, len(profile.lengths) - 5)
        assert profile.sigma == sigma
        assert not profile.one_sided
        assert profile.spread <= 20.0


@pytest.mark.slow
class TestTransitionRelations:
    """Test the transition and return time relations of enhanced nests"""

    def test_enhanced_nests_of_corpus(self, fibonacci_quadratic, cubic):
        """Test p_(n+1) >= 2 p_n and 3 r(I_(n+1)) >= p_n above every long cascade found"""
        prec = Precision()
        corpus = [
            (create_quadratic_map(-1.7499), alpha_piece(-1.7499), 0, 60),
            (fibonacci_quadratic, critical_start_piece(fibonacci_quadratic, 0, prec), 0, 12),
        ]
        for index in range(2):
            corpus.append((cubic, critical_start_piece(cubic, index, prec), index, 20))

        computed = []
        for spec, start, index, depth in corpus:
            if start is None:
                continue
            computed.extend(cascade_nests(spec, start, depth, index))
        assert computed
        for enhanced in computed:
            assert enhanced.relations_hold
            assert enhanced.steps[0].index == 0


@pytest.mark.slow
class TestFibonacciScaling:
    """Test closest-return decay of the Fibonacci maps at 256 bits"""

    def test_quadratic_decay_is_geometric(self):
        """Test a geometric fit with r^2 at least 0.98 over n >= 5 for degree 2"""
        report = order_mismatch_experiment(2, 6, depth=20, precision=Precision(bits=256))
        quadratic = report.fits[0]
        assert quadratic.degree == 2
        assert quadratic.strictly_decreasing
        assert quadratic.geometric_r_squared >= 0.98


@pytest.mark.slow
class TestNestedOrDisjoint:
    """Test that cached puzzle pieces never cross"""

    def test_corpus_pieces(self, chebyshev, logistic, fibonacci_quadratic):
        """Test 0 violations over more than 10^5 pieces"""
        beta = fibonacci_quadratic.domain[1]
        alpha = 0.5 * (1.0 - math.sqrt(1.0 - 4.0 * float(fibonacci_quadratic(0.0))))
        corpus = [
            (chebyshev, [-1.0, 2.0], 14),
            (logistic, [0.0, 0.75], 14),
            (fibonacci_quadratic, [alpha, beta], 10),
        ]
        total = 0
        for spec, points, depth in corpus:
            admissible = create_admissible_set(spec, points)
            lattice = preimage_lattice(spec, admissible, depth)
            cache = PuzzleCache(tolerance=1e-12)
            for n in range(depth + 1):
                cache.extend(puzzle_pieces(spec, admissible, n, lattice))
            assert cache.verify() == []
            total += len(cache)
        assert total >= 100_000


@pytest.mark.slow
class TestAngleControl:
    """Test the angle lemma of z -> z^ell over powers, scales and angles"""

    @pytest.mark.parametrize("ell", [2, 3, 4])
    @pytest.mark.parametrize("K", [1.5, 2.0, 4.0])
    @pytest.mark.parametrize("theta", [0.3, 0.8, 1.2])
    def test_power_pullback_grid(self, ell, K, theta):
        """Test sample-doubling stability and the bound from the vertex over the far endpoint"""
        coarse = power_pullback(ell, K, theta, samples=10_000)
        fine = power_pullback(ell, K, theta, samples=20_000)
        assert fine.lambda_est == pytest.approx(coarse.lambda_est, rel=0.01)
        assert coarse.theta_prime <= coarse.theta_inner

        # the boundary point with z^ell on the far endpoint of the target base
        if ell % 2 == 0:
            base, radius = (-1.0, 1.0), K ** (1.0 / ell)
        else:
            base, radius = (-K, 1.0), K
        (vertex_angle,) = vertex_angles(np.array([radius * np.exp(1j * math.pi / ell)]), base)
        assert coarse.theta_prime <= vertex_angle + 1e-2
        if vertex_angle + 1e-2 < theta:
            assert coarse.lambda_est < 1.0
            assert coarse.split_constant is not None


@pytest.mark.slow
class TestConjugacyDistortion:
    """Test the conjugacy of 4x(1 - x) and sin(pi x) as the grid deepens"""

    def test_kappa_stabilises(self, logistic):
        """Test bounded residual growth and under 5% kappa growth over the last two doublings"""
        sine = create_sine_map(1.0)
        fixed = bracketed_root(lambda t: math.sin(math.pi * t) - t, 0.6, 0.9)
        residuals, kappas = [], []
        for depth in (10, 11, 12):
            grid = build_conjugacy(logistic, sine, [0.0, 0.75], [0.0, fixed], depth)
            residuals.append(grid.residual)
            kappas.append(qs_constant(grid).kappa_max)
        assert all(b <= 2.0 * a + 1e-12 for a, b in zip(residuals, residuals[1:]))
        assert all(math.isfinite(k) for k in kappas)
        assert kappas[-1] <= 1.05 * kappas[0]


@pytest.mark.slow
class TestParabolicRates:
    """Test backward orbits of x + x^(d+1) over 10^4 steps"""

    @pytest.mark.parametrize("d", [1, 2])
    def test_escape_exponent(self, d):
        """Test that the fitted exponent is within 10% of -1/d"""
        fit = parabolic_escape_rate(create_parabolic_germ(d), 0.0, 0.5, n=10_000)
        assert fit.degree_estimate == d
        assert fit.fitted_exponent == pytest.approx(-1.0 / d, rel=0.1)

    @pytest.mark.parametrize("d", [1, 2])
    def test_length_sum_tail(self, d):
        """Test that the d + 1/2 power sum of fundamental domains has a tail under 1%"""
        fit = parabolic_escape_rate(create_parabolic_germ(d), 0.0, 0.5, n=10_000)
        report = length_sum(fundamental_domain_chain(fit), exponent=d + 0.5)
        assert report.terms == 10_000
        assert report.cauchy
        assert report.tail < 0.01 * report.total


@pytest.mark.slow
class TestCrossRatioExpansion:
    """Test that negative Schwarzian branches never contract cross-ratios"""

    def test_random_configurations(self, chebyshev):
        """Test 10^3 random (T, J, s) configurations of x^2 - 2"""
        rng = np.random.default_rng(7)
        checked = 0
        for _ in range(1000):
            width = rng.uniform(0.01, 0.1)
            a = rng.uniform(-2.0, 2.0 - width)
            T = (a, a + width)
            J = (a + rng.uniform(0.1, 0.4) * width, a + width - rng.uniform(0.1, 0.4) * width)
            s = int(rng.integers(1, 7))
            try:
                report = cross_ratio_distortion(chebyshev, T, J, s)
            except NotDiffeomorphic:
                continue
            checked += 1
            assert report.negative_schwarzian
            assert report.distortion >= 1.0 - 1e-9
        assert checked >= 100


class TestDeterminism:
    """Test that reruns with a fixed configuration print identical output"""

    def test_analyze_rerun(self, capsys, write_map, sample_definition, tmp_path):
        """Test byte-identical CSV output and identical report results"""
        path = write_map(sample_definition)
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"horizon": 300, "children_horizon": 100, "grid_density": 200}))

        outputs = []
        for _ in range(2):
            assert main(["analyze", path, "--config", str(config), "--csv"]) == 0
            outputs.append(capsys.readouterr().out)
        assert outputs[0] == outputs[1]

        reports = []
        for _ in range(2):
            assert main(["analyze", path, "--config", str(config)]) == 0
            reports.append(json.loads(capsys.readouterr().out))
        assert reports[0]["result"] == reports[1]["result"]
        assert reports[0]["config"] == reports[1]["config"]
