#pragma once

// Offline design of the terminal ingredients: a structured semidefinite
// program maximizing sum log det E_i subject to the terminal cost decrease
// blocks, the coupling relaxation bound, the terminal covariance blocks and
// per-row margin constraints, followed by the closed-form terminal set
// scaling. Runs either as one monolithic program or as a consensus loop in
// which each agent owns copies of its neighborhood blocks.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsmpc/model.hpp"

namespace dsmpc {

struct TerminalIngredients {
    std::vector<Eigen::MatrixXd> P;      // terminal weight, n_i x n_i, PD
    std::vector<Eigen::MatrixXd> K;      // neighborhood gain, m_i x d_i
    std::vector<Eigen::MatrixXd> Gamma;  // relaxation weight, d_i x d_i
    std::vector<double> psi;             // per-subsystem covariance cap
    double alpha = 0.0;                  // terminal set scaling
    std::vector<double> alpha0;          // initial split, sum <= alpha
    std::string hash;                    // model content hash at design time
};

enum class SynthesisMode { Monolithic, Consensus };

// Solves the design program and fills every ingredient field including the
// set scaling. Throws SynthesisInfeasible when no stabilizing terminal
// design exists for the model.
TerminalIngredients synthesize_terminal(const NetworkModel& net,
                                        SynthesisMode mode = SynthesisMode::Monolithic);

// lam_max of A_K' P A_K + C_K' P C_K + Q + K' R K - P over the assembled
// global system; nonpositive (within tolerance) certifies the terminal
// cost decrease that the design program encodes.
double verify_assumption4(const TerminalIngredients& ing, const NetworkModel& net);

// Global stacked gain (m x n) and block-diagonal terminal weight (n x n).
Eigen::MatrixXd global_gain(const TerminalIngredients& ing, const NetworkModel& net);
Eigen::MatrixXd global_terminal_weight(const TerminalIngredients& ing, const NetworkModel& net);

// One bound of the terminal set scaling program, kind "state", "input" or
// "cap"; alpha is the minimum over all bounds.
struct AlphaBound {
    int subsystem = 0;
    std::string kind;
    int row = 0;
    double value = 0.0;
};

struct AlphaReport {
    double alpha = 0.0;
    std::vector<AlphaBound> bounds;
};

// Closed-form evaluation of the set scaling program: each constraint of the
// distributed LP gives a locally computable ratio and the optimum is their
// minimum (propagated by diameter-many neighborhood min rounds). Throws
// EmptyTerminalSet when a tightened terminal bound is nonpositive.
AlphaReport compute_alpha(const TerminalIngredients& ing, const NetworkModel& net);

// Numeric terminal covariance blocks for fixed data.
// Propagation: [[E_self, A E + B Y, C E + D Y], [*, E, 0], [*, 0, E/2]]
Eigen::MatrixXd terminal_propagation_block(const LocalMaps& m, const Eigen::MatrixXd& E_nbhd,
                                           const Eigen::MatrixXd& Y, const Eigen::MatrixXd& E_self);
// Floor: [[S, I], [I, I/psi]], feasible exactly when S dominates psi I.
Eigen::MatrixXd covariance_floor_block(const Eigen::MatrixXd& S, double psi);

// Structured text serialization; loading verifies shapes only, the model
// hash is checked by the callers that pair ingredients with a config.
void save_ingredients(const TerminalIngredients& ing, const std::string& path);
TerminalIngredients load_ingredients(const std::string& path);

}  // namespace dsmpc
