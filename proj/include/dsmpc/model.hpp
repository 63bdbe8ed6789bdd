#pragma once

// Networked system description: coupling graph, per-subsystem dynamics with
// multiplicative noise, weights and probabilistic constraint rows, plus the
// global block assembly and the selection operators used by the synthesis
// and control layers.
//
// Subsystem indices are 0-based internally; the config format and all error
// messages use 1-based numbering.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dsmpc/errors.hpp"

namespace dsmpc {

struct CouplingGraph {
    int node_count = 0;
    std::vector<std::pair<int, int>> edges;  // normalized i < j, deduplicated
    bool adjacent(int i, int j) const;
};

struct ConstraintRow {
    Eigen::RowVectorXd H;
    double h = 0.0;       // strictly positive
    double p = 0.0;       // in (0,1)
    double factor = 0.0;  // optional quantile factor override; 0 = derive from p
};

struct SubsystemModel {
    int index = 0;
    int n = 0;  // state dimension
    int m = 0;  // input dimension
    std::map<int, Eigen::MatrixXd> A_blocks;  // keyed by neighbor, includes self
    std::map<int, Eigen::MatrixXd> C_blocks;
    Eigen::MatrixXd B, D;
    Eigen::MatrixXd Q, R;
    std::vector<ConstraintRow> state_rows;
    std::vector<ConstraintRow> input_rows;
};

struct MpcParams {
    int N = 15;
    double eps = 0.5;        // constraint linearization parameter
    double rho = 10.0;       // consensus penalty
    double eps_c = 1e-4;     // consensus stopping tolerance
    int max_iter = 500;      // consensus iteration cap
    double cov_scale = 0.1;  // covariance copies exchanged as svec/cov_scale
    double cov_trace_weight = 1e-3;  // trace preference on covariance copies
};

struct SynthesisParams {
    double kappa = 0.5;      // terminal margin fraction kept for the set size
    double q_margin = 1e-4;  // inflation making the cost condition strict
};

struct SimParams {
    int runs = 100;
    int steps = 15;
    std::uint64_t seed = 0;
    Eigen::VectorXd x0;  // stacked global initial state
};

struct NetworkModel {
    CouplingGraph graph;
    std::vector<SubsystemModel> subsystems;
    MpcParams mpc;
    SynthesisParams synthesis;
    SimParams sim;

    int n = 0, m = 0;                      // global dims
    std::vector<int> state_offset;         // per subsystem into the global state
    std::vector<int> input_offset;
    std::vector<std::vector<int>> nbhd;    // sorted, self included

    int M() const { return graph.node_count; }
    const std::vector<int>& neighbors(int i) const { return nbhd[i]; }
    int nbhd_dim(int i) const;  // sum of state dims over N_i
};

// Validates structural assumptions and fills the derived index fields.
// Throws DimensionMismatch, DirectedEdge, ZeroAWithNonzeroC,
// NonpositiveBound, NonSymmetric on violations.
void validate_network(NetworkModel& net);

// Parse a config document (schema in configs/README.md). Unknown keys are
// rejected with ConfigError.
NetworkModel build_network(const std::string& json_text);
NetworkModel load_network(const std::string& path);

// Canonical content hash of the model parameters (graph + dynamics +
// constraints + weights), used to bind ingredient files to their model.
std::string model_hash(const NetworkModel& net);

// Row-block view of subsystem i's dynamics over its neighborhood: columns of
// A and C stack the coupling blocks in ascending neighbor order, so
// x_i+ = A z_nbhd + B u_i + (C z_nbhd + D u_i) w_i.
struct LocalMaps {
    Eigen::MatrixXd A;  // n_i x nbhd_dim(i)
    Eigen::MatrixXd B;  // n_i x m_i
    Eigen::MatrixXd C;  // n_i x nbhd_dim(i)
    Eigen::MatrixXd D;  // n_i x m_i
};

LocalMaps local_maps(const NetworkModel& net, int i);

struct LiftingOperators {
    std::vector<Eigen::MatrixXd> W;  // neighborhood selection, rows sum to 1
    std::vector<Eigen::MatrixXd> T;  // own-block selection
};

struct GlobalSystem {
    Eigen::MatrixXd A, B, C, D, Q, R;
    LiftingOperators lift;
};

GlobalSystem assemble_global(const NetworkModel& net);

}  // namespace dsmpc
