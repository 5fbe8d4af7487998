#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vmass/grid.hpp"
#include "vmass/integrands.hpp"

namespace vmass {

enum class LawKind { J, JBar, JK };
const char* to_string(LawKind k);

struct ComplianceOptions {
    /// Relative primal-dual gap target for the non-quadratic laws.
    double tol = 1e-6;
    int max_iterations = 20000;
    /// Floor densities relative to the mean density of mu, largest first.
    std::vector<double> floors = {1e-4, 1e-5, 1e-6};
    /// Skip the active-set fast path and always use the floor ladder.
    bool force_floor = false;
    /// Check the certificate every this many iterations.
    int gap_every = 20;
};

struct ComplianceReport {
    LawKind law = LawKind::J;
    int k = 0;
    bool finite = true;
    double value = 0.0;
    /// Certified bracket: primal <= optimum <= dual (quadratic law: both equal).
    double primal = 0.0;
    double dual = 0.0;
    double gap = 0.0;
    int iterations = 0;
    /// Floor actually used (0 on the active-set path) and the ladder values.
    double floor = 0.0;
    std::vector<std::pair<double, double>> floor_ladder;
    double extrapolation_residual = 0.0;
    double equilibrium_residual = 0.0;
    std::string diagnosis;
    DisplacementField displacement;
    StressField stress;
};

/// c(mu) for the quadratic law j. Bars in mu's segment part get the
/// one-dimensional stiffness density/(g L) with g the rank-one coefficient.
ComplianceReport compliance_c(const DiscreteDomain& dom, const DensityMeasure& mu, const ElasticLaw& law,
                              const ComplianceOptions& opts = {});
/// E_k(mu) (k defaults to dim-1, i.e. E). k = dim falls back to c.
ComplianceReport compliance_E(const DiscreteDomain& dom, const DensityMeasure& mu, const ElasticLaw& law,
                              std::optional<int> k = std::nullopt, const ComplianceOptions& opts = {});
/// c(1_omega / eps). Requires |omega| = eps within one cell volume.
double compliance_c_eps(const DiscreteDomain& dom, const std::vector<int>& omega, double eps, const ElasticLaw& law,
                        const ComplianceOptions& opts = {});

/// Splits segments whose endpoints sit on nodes into primitive bars
/// (no node strictly inside). Returns bars with their linear densities.
std::vector<std::pair<Bar, double>> segments_to_bars(const DiscreteDomain& dom, const std::vector<Segment>& segs);

} // namespace vmass
