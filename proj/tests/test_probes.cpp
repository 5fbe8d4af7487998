#include <cmath>
#include <optional>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "vmass/error.hpp"
#include "vmass/probes.hpp"

using namespace vmass;

namespace {

// Kernel with barycenter xi: xi +- d with equal weights.
DiscreteYoungMeasure symmetric_kernel(const SymTensor& xi, const SymTensor& d) {
    return DiscreteYoungMeasure(xi.dim(), {{0.5, xi + d}, {0.5, xi - d}});
}

template <class F>
ErrorCode error_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::Ok;
}

} // namespace

TEST_CASE("Young measure: weights are normalized and the barycenter is consistent") {
    const DiscreteYoungMeasure nu(2, {{2.0, SymTensor::from2(1, 0, 0)}, {6.0, SymTensor::from2(0, 1, 3)}});
    CHECK(nu.atoms()[0].first == doctest::Approx(0.25));
    CHECK(nu.consistent());
    CHECK(nu.barycenter()(1, 1) == doctest::Approx(2.25));
    CHECK(nu.barycenter()(0, 1) == doctest::Approx(0.75));
    CHECK(error_of([] { DiscreteYoungMeasure(2, {{0.0, SymTensor(2)}}); }) == ErrorCode::InputError);
}

TEST_CASE("Seppecher field: exact discrete divergence, identity on the balls, zero cell means") {
    const SeppecherField f = seppecher_field(0.125, 192);
    CHECK(f.cells_per_period == 24);
    CHECK(f.div_residual <= f.div_bound);
    CHECK(f.div_residual <= 1e-9);
    CHECK(f.ball_deviation <= 1e-12);
    CHECK(!f.ball_cells.empty());
    CHECK(f.period_mean <= 1e-12);
    // sigma averages to zero in dx but to the identity in dmu.
    CHECK(std::abs(f.mean_dx[0]) <= 1e-12);
    CHECK(f.mean_dmu[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(f.mean_dmu[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(f.mean_dmu[2]) <= 1e-12);
    // |I|^2 = 2 times the rasterized mass, which is close to 1.
    CHECK(f.energy == doctest::Approx(2.0 * f.mu.total_mass()).epsilon(1e-12));
    CHECK(f.mu.total_mass() == doctest::Approx(1.0).epsilon(0.05));
    // Outside twice the radius the stress vanishes.
    const int far = f.dom.cell_index(0, 0);
    CHECK(f.sigma.tensor(far).norm() == 0.0);
}

TEST_CASE("Seppecher field: unresolved balls and misaligned periods are rejected") {
    CHECK(error_of([] { seppecher_field(0.125, 64); }) == ErrorCode::Unresolved);
    CHECK(error_of([] { seppecher_field(0.125, 100); }) == ErrorCode::InputError);
    CHECK(error_of([] { seppecher_field(0.3, 100); }) == ErrorCode::InputError);
}

TEST_CASE("Young extraction: constant field gives one atom") {
    const DiscreteDomain dom(2, {8, 8}, 0.125);
    const SymTensor s = SymTensor::from2(0.3, -0.2, 1.1);
    StressField sig{2, 3, std::vector<double>(3 * dom.num_cells()), {}};
    for (int c = 0; c < dom.num_cells(); ++c) pack_strain(s, sig.values.data() + 3 * c);
    const YoungReport r = young_extract(dom, {{DensityMeasure::uniform(dom), sig}});
    REQUIRE(r.fits.size() == 1);
    for (const YoungFit& f : r.fits[0]) {
        REQUIRE(f.ok);
        CHECK(f.measure.size() == 1);
        CHECK(f.measure.weight_near(s, 1e-12) == doctest::Approx(1.0));
        CHECK(f.mass == doctest::Approx(0.25));
    }
}

TEST_CASE("Young extraction: a half-half laminate gives two atoms of weight 1/2") {
    const DiscreteDomain dom(2, {16, 16}, 1.0 / 16);
    const SymTensor s1 = SymTensor::from2(1, 0, 0), s2 = SymTensor::from2(0, 0.5, -1);
    StressField sig{2, 3, std::vector<double>(3 * dom.num_cells()), {}};
    for (int c = 0; c < dom.num_cells(); ++c) pack_strain(dom.cell_ijk(c)[0] % 2 ? s2 : s1, sig.values.data() + 3 * c);
    const YoungReport r = young_extract(dom, {{DensityMeasure::uniform(dom), sig}});
    for (const YoungFit& f : r.fits[0]) {
        REQUIRE(f.ok);
        CHECK(f.measure.weight_near(s1, 1e-12) == doctest::Approx(0.5).epsilon(1e-9));
        CHECK(f.measure.weight_near(s2, 1e-12) == doctest::Approx(0.5).epsilon(1e-9));
        CHECK(f.residual <= 1e-9);
    }
}

TEST_CASE("Young extraction: user test functions and an ill-conditioned fit") {
    const DiscreteDomain dom(2, {4, 4}, 0.25);
    StressField sig{2, 3, std::vector<double>(3 * dom.num_cells(), 0.0), {}};
    for (int c = 0; c < dom.num_cells(); ++c) sig.values[3 * c] = c % 2 ? 1.0 : -1.0;
    // A single even test function cannot separate +-1: more atoms than moments.
    const std::vector<TestFunction> psi{[](const SymTensor& x) { return x(0, 0) * x(0, 0); }};
    YoungOptions o;
    o.probe_cells = 1;
    const YoungReport r = young_extract(dom, {{DensityMeasure::uniform(dom), sig}}, psi, o);
    CHECK(!r.fits[0][0].ok);
    CHECK(!r.fits[0][0].message.empty());
}

TEST_CASE("Young extraction on the Seppecher ladder concentrates at the identity") {
    std::vector<std::pair<DensityMeasure, StressField>> fields;
    std::optional<DiscreteDomain> dom;
    for (double eps : {0.125, 0.0625, 0.03125}) {
        SeppecherField f = seppecher_field(eps, 1312);
        dom = f.dom;
        fields.emplace_back(std::move(f.mu), std::move(f.sigma));
    }
    const YoungReport r = young_extract(*dom, fields);
    REQUIRE(r.fits.size() == 3);
    for (const YoungFit& f : r.fits.back()) {
        REQUIRE(f.ok);
        CHECK(f.measure.weight_near(SymTensor::identity(2), 1e-9) >= 0.95);
    }
}

TEST_CASE("conj2: equality on singular Diracs, the identity Dirac violates it") {
    const ElasticLaw law(2, 0.0, 0.5); // gamma = 1
    const DiscreteYoungMeasure rank1(2, {{1.0, outer(2, {0.6, 0.8, 0}, 1.7)}});
    const Conj2Result a = conj2_check(rank1, law);
    CHECK(a.lhs == doctest::Approx(a.rhs).epsilon(1e-12));
    CHECK(a.satisfied);

    // j*(I) by direct ascent is 1; the relaxed conjugate is 1/2 (|1| + |1|)^2 = 2.
    const DiscreteYoungMeasure id(2, {{1.0, SymTensor::identity(2)}});
    const Conj2Result b = conj2_check(id, law);
    CHECK(b.lhs == doctest::Approx(oracle::conjugate_by_ascent(law, SymTensor::identity(2))).epsilon(1e-6));
    CHECK(b.rhs == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(!b.satisfied);
}

TEST_CASE("conj2: two rank-one atoms") {
    const ElasticLaw law(2, 0.7, 0.4);
    const SymTensor x1 = outer(2, {1, 0, 0}, 2.0), x2 = outer(2, {0, 1, 0}, -1.0);
    const DiscreteYoungMeasure nu(2, {{0.5, x1}, {0.5, x2}});
    const Conj2Result r = conj2_check(nu, law);
    CHECK(r.lhs == doctest::Approx(0.5 * law.gamma() * (4.0 + 1.0) * 0.5));
    CHECK(r.satisfied);
}

TEST_CASE("conj3: Dirac kernels collapse the chain") {
    const ElasticLaw law(2, 0.3, 0.6);
    const SymTensor a = outer(2, {0.6, 0.8, 0}, 1.5), b = outer(2, {1, 0, 0}, -0.5);
    const DiscreteYoungMeasure nu0(2, {{0.3, a}, {0.7, b}});
    const Conj3Report r =
        conj3_verify(nu0, {DiscreteYoungMeasure(2, {{1.0, a}}), DiscreteYoungMeasure(2, {{1.0, b}})}, law);
    CHECK(r.q1 == doctest::Approx(r.q2).epsilon(1e-12));
    CHECK(r.q2 == doctest::Approx(r.q3).epsilon(1e-10));
    CHECK(r.chain_holds);
    CHECK(r.conj2.satisfied);
}

TEST_CASE("conj3: first slack equals the Jensen gap of j* on the kernels") {
    const ElasticLaw law(2, 1.0, 0.5);
    const SymTensor a = outer(2, {0.8, -0.6, 0}, 1.0);
    const SymTensor d = SymTensor::from2(0.4, 0.1, -0.3);
    const DiscreteYoungMeasure nu0(2, {{1.0, a}});
    const Conj3Report r = conj3_verify(nu0, {symmetric_kernel(a, d)}, law);
    // j* is quadratic, so the Jensen gap of a +-d pair is j*(d).
    CHECK(r.q1 - r.q2 == doctest::Approx(oracle::conjugate_by_ascent(law, d)).epsilon(1e-6));
    CHECK(r.chain_holds);
    CHECK(r.composed.size() == 2);
}

TEST_CASE("conj3: random admissible instances never break conj2 (3D too)") {
    std::mt19937_64 rng(7);
    for (int dim : {2, 3}) {
        const ElasticLaw law(dim, 0.8, 0.5);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<std::pair<double, SymTensor>> atoms;
            std::vector<DiscreteYoungMeasure> kernels;
            for (int i = 0; i < 3; ++i) {
                const SymTensor xi = oracle::random_rank_k(rng, dim, dim - 1);
                atoms.emplace_back(1.0 + i, xi);
                kernels.push_back(symmetric_kernel(xi, oracle::random_tensor(rng, dim)));
            }
            const Conj3Report r = conj3_verify(DiscreteYoungMeasure(dim, atoms), kernels, law);
            CHECK(r.chain_holds);
            CHECK(r.conj2.satisfied);
        }
    }
}

TEST_CASE("conj3: precondition violations name the offending atom") {
    const ElasticLaw law(2, 0.0, 0.5);
    const DiscreteYoungMeasure nu0(2, {{1.0, SymTensor::identity(2)}});
    try {
        conj3_verify(nu0, {DiscreteYoungMeasure(2, {{1.0, SymTensor::identity(2)}})}, law);
        FAIL("expected an input error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InputError);
        CHECK(std::string(e.what()).find("atom 0") != std::string::npos);
    }
    const SymTensor a = outer(2, {1, 0, 0}, 1.0);
    CHECK(error_of([&] {
              conj3_verify(DiscreteYoungMeasure(2, {{1.0, a}}), {DiscreteYoungMeasure(2, {{1.0, 2.0 * a}})}, law);
          }) == ErrorCode::InputError);
}

TEST_CASE("gamma sweep: fattened bar compliance decreases toward the bar value") {
    DiscreteDomain dom(2, {128, 128}, 1.0 / 128);
    dom.clamp_box({0, 0, 0}, {0, 1, 0});
    dom.add_point_load({1, 0.5, 0}, {-1, 0, 0});
    DensityMeasure target(dom);
    target.segments().push_back({{0, 0.5, 0}, {1, 0.5, 0}, 1.0});
    const ElasticLaw law(2, 0.0, 0.5);
    const GammaSweepReport r = gamma_upper_sweep(dom, target, {0.1, 0.05, 0.02, 0.01}, law);
    CHECK(r.c_target == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(r.E_target == doctest::Approx(r.c_target).epsilon(1e-4));
    for (std::size_t i = 1; i < r.steps.size(); ++i) CHECK(r.steps[i].c_eps < r.steps[i - 1].c_eps);
    CHECK(r.steps.back().c_eps == doctest::Approx(r.c_target).epsilon(0.1));
    CHECK(r.upper_bound_holds);

    const GammaSweepReport one = gamma_upper_sweep(dom, target, {0.05}, law);
    CHECK(one.steps.size() == 1);
    CHECK(error_of([&] { gamma_upper_sweep(dom, target, {0.01, 0.05}, law); }) == ErrorCode::InputError);
    CHECK(error_of([&] { gamma_upper_sweep(dom, DensityMeasure(dom), {0.05}, law); }) == ErrorCode::InputError);
}

TEST_CASE("gap probe: scalar gap shrinks, elastic gap stays away from zero") {
    const ElasticLaw law(2, 0.0, 0.5);
    DiscreteDomain sd(2, {16, 16}, 1.0 / 16, {0, 0, 0}, true);
    sd.add_point_load({0.25, 0.5, 0}, {1, 0, 0});
    sd.add_point_load({0.75, 0.5, 0}, {-1, 0, 0});
    const GapReport s = gap_probe(sd, {1.0, 0.5, 0.25, 0.125, 0.0625}, law);
    CHECK(s.min_c == doctest::Approx(s.min_E));
    for (std::size_t i = 0; i < s.steps.size(); ++i) {
        CHECK(s.steps[i].finite);
        CHECK(s.steps[i].gap >= -1e-9);
        if (i > 0) CHECK(s.steps[i].gap < s.steps[i - 1].gap);
    }

    DiscreteDomain ed(2, {16, 16}, 1.0 / 16);
    ed.clamp_box({0, 0, 0}, {0, 1, 0});
    ed.add_point_load({1, 0.5, 0}, {0, -1, 0});
    const GapReport e = gap_probe(ed, {1.0}, law);
    // The original gauge is smaller, so min c < min E.
    CHECK(e.min_c < e.min_E);
    CHECK(e.steps[0].gap > 0.5 * (e.min_E - e.min_c));
}
