#include "dsmpc/model.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "json.hpp"

namespace dsmpc {

using nlohmann::json;

bool CouplingGraph::adjacent(int i, int j) const {
    if (i > j) std::swap(i, j);
    for (auto& e : edges)
        if (e.first == i && e.second == j) return true;
    return false;
}

int NetworkModel::nbhd_dim(int i) const {
    int d = 0;
    for (int j : nbhd[i]) d += subsystems[j].n;
    return d;
}

namespace {

std::string sub_label(int i) { return "subsystem " + std::to_string(i + 1); }

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

Eigen::MatrixXd parse_matrix(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw ConfigError(where + ": expected an array of rows");
    const int rows = static_cast<int>(j.size());
    const int cols = static_cast<int>(j[0].size());
    Eigen::MatrixXd M(rows, cols);
    for (int r = 0; r < rows; ++r) {
        if (!j[r].is_array() || static_cast<int>(j[r].size()) != cols)
            throw ConfigError(where + ": ragged rows");
        for (int c = 0; c < cols; ++c) M(r, c) = j[r][c].get<double>();
    }
    return M;
}

Eigen::VectorXd parse_vector(const json& j, const std::string& where) {
    if (!j.is_array()) throw ConfigError(where + ": expected an array");
    Eigen::VectorXd v(j.size());
    for (size_t k = 0; k < j.size(); ++k) v[k] = j[k].get<double>();
    return v;
}

std::vector<ConstraintRow> parse_rows(const json& j, const std::string& where) {
    std::vector<ConstraintRow> rows;
    for (size_t k = 0; k < j.size(); ++k) {
        const json& r = j[k];
        check_keys(r, {"H", "h", "p", "factor"}, where + " row " + std::to_string(k + 1));
        ConstraintRow row;
        row.H = parse_vector(r.at("H"), where + ".H").transpose();
        row.h = r.at("h").get<double>();
        row.p = r.at("p").get<double>();
        if (r.contains("factor")) row.factor = r.at("factor").get<double>();
        rows.push_back(std::move(row));
    }
    return rows;
}

void require_spd(const Eigen::MatrixXd& M, const std::string& what) {
    double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw NonSymmetric(what + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 0)
        throw NonpositiveBound(what + " is not positive definite");
}

void hash_mix(std::uint64_t& h, const std::string& s) {
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;  // FNV-1a
    }
}

void hash_matrix(std::uint64_t& h, const Eigen::MatrixXd& M) {
    char buf[40];
    for (int i = 0; i < M.rows(); ++i)
        for (int j = 0; j < M.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g,", M(i, j));
            hash_mix(h, buf);
        }
    hash_mix(h, ";");
}

}  // namespace

void validate_network(NetworkModel& net) {
    const int M = net.graph.node_count;
    if (M < 1) throw DimensionMismatch("graph needs at least one node");
    if (static_cast<int>(net.subsystems.size()) != M)
        throw DimensionMismatch("expected " + std::to_string(M) + " subsystems, got " +
                                std::to_string(net.subsystems.size()));

    // normalize edges
    std::set<std::pair<int, int>> eset;
    for (auto [a, b] : net.graph.edges) {
        if (a == b) throw ConfigError("self loop on node " + std::to_string(a + 1));
        if (a < 0 || b < 0 || a >= M || b >= M)
            throw DimensionMismatch("edge endpoint out of range");
        eset.insert({std::min(a, b), std::max(a, b)});
    }
    net.graph.edges.assign(eset.begin(), eset.end());

    net.nbhd.assign(M, {});
    for (int i = 0; i < M; ++i) net.nbhd[i].push_back(i);
    for (auto [a, b] : net.graph.edges) {
        net.nbhd[a].push_back(b);
        net.nbhd[b].push_back(a);
    }
    for (auto& nb : net.nbhd) std::sort(nb.begin(), nb.end());

    net.n = net.m = 0;
    net.state_offset.assign(M, 0);
    net.input_offset.assign(M, 0);
    for (int i = 0; i < M; ++i) {
        auto& s = net.subsystems[i];
        s.index = i;
        if (s.n < 1 || s.m < 1) throw DimensionMismatch(sub_label(i) + ": empty dimensions");
        net.state_offset[i] = net.n;
        net.input_offset[i] = net.m;
        net.n += s.n;
        net.m += s.m;
    }

    for (int i = 0; i < M; ++i) {
        auto& s = net.subsystems[i];
        const auto& nb = net.nbhd[i];
        auto is_neighbor = [&](int j) { return std::binary_search(nb.begin(), nb.end(), j); };

        if (s.B.rows() != s.n || s.B.cols() != s.m)
            throw DimensionMismatch(sub_label(i) + ": B must be n x m");
        if (s.D.size() == 0) s.D = Eigen::MatrixXd::Zero(s.n, s.m);
        if (s.D.rows() != s.n || s.D.cols() != s.m)
            throw DimensionMismatch(sub_label(i) + ": D must be n x m");
        if (s.Q.rows() != s.n || s.Q.cols() != s.n)
            throw DimensionMismatch(sub_label(i) + ": Q must be n x n");
        if (s.R.rows() != s.m || s.R.cols() != s.m)
            throw DimensionMismatch(sub_label(i) + ": R must be m x m");
        require_spd(s.Q, sub_label(i) + " Q");
        require_spd(s.R, sub_label(i) + " R");

        for (auto& [j, blk] : s.A_blocks) {
            if (!is_neighbor(j))
                throw DirectedEdge(sub_label(i) + ": A block for non-neighbor " +
                                   std::to_string(j + 1) + " (missing undirected edge)");
            if (blk.rows() != s.n || blk.cols() != net.subsystems[j].n)
                throw DimensionMismatch(sub_label(i) + ": A block " + std::to_string(j + 1) +
                                        " has wrong shape");
        }
        for (auto& [j, blk] : s.C_blocks) {
            if (!is_neighbor(j))
                throw DirectedEdge(sub_label(i) + ": C block for non-neighbor " +
                                   std::to_string(j + 1) + " (missing undirected edge)");
            if (blk.rows() != s.n || blk.cols() != net.subsystems[j].n)
                throw DimensionMismatch(sub_label(i) + ": C block " + std::to_string(j + 1) +
                                        " has wrong shape");
        }
        // absent blocks are zero couplings; C may only act where A does
        for (int j : nb) {
            if (!s.A_blocks.count(j))
                s.A_blocks[j] = Eigen::MatrixXd::Zero(s.n, net.subsystems[j].n);
            if (!s.C_blocks.count(j))
                s.C_blocks[j] = Eigen::MatrixXd::Zero(s.n, net.subsystems[j].n);
            if (s.A_blocks[j].isZero(0.0) && !s.C_blocks[j].isZero(0.0))
                throw ZeroAWithNonzeroC(sub_label(i) + ": C block " + std::to_string(j + 1) +
                                        " is nonzero while the A block is zero");
        }

        for (auto* rows : {&s.state_rows, &s.input_rows}) {
            bool state = rows == &s.state_rows;
            for (size_t r = 0; r < rows->size(); ++r) {
                auto& row = (*rows)[r];
                int want = state ? s.n : s.m;
                std::string label = sub_label(i) + (state ? " state row " : " input row ") +
                                    std::to_string(r + 1);
                if (row.H.cols() != want) throw DimensionMismatch(label + ": H has wrong width");
                if (!(row.h > 0)) throw NonpositiveBound(label + ": h must be positive");
                if (!(row.p > 0 && row.p < 1))
                    throw NonpositiveBound(label + ": p must lie in (0,1)");
                if (row.factor < 0 || !std::isfinite(row.factor))
                    throw ConfigError(label + ": quantile factor must be positive");
            }
        }
    }

    if (net.sim.x0.size() != 0 && net.sim.x0.size() != net.n)
        throw DimensionMismatch("simulation x0 has length " + std::to_string(net.sim.x0.size()) +
                                ", expected " + std::to_string(net.n));
    if (net.mpc.N < 1 || !(net.mpc.eps > 0 && net.mpc.eps <= 1) || !(net.mpc.rho > 0) ||
        !(net.mpc.eps_c > 0) || net.mpc.max_iter < 1)
        throw ConfigError("mpc parameters out of range");
    if (!(net.mpc.cov_scale > 0) || net.mpc.cov_trace_weight < 0)
        throw ConfigError("mpc consensus scaling parameters out of range");
    if (!(net.synthesis.kappa > 0 && net.synthesis.kappa <= 1) || net.synthesis.q_margin < 0)
        throw ConfigError("synthesis parameters out of range");
}

NetworkModel build_network(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    check_keys(root, {"graph", "subsystems", "mpc", "synthesis", "simulation"}, "config root");

    NetworkModel net;
    const json& g = root.at("graph");
    check_keys(g, {"nodes", "edges"}, "graph");
    net.graph.node_count = g.at("nodes").get<int>();
    for (const auto& e : g.at("edges")) {
        if (!e.is_array() || e.size() != 2) throw ConfigError("graph edge must be a pair");
        net.graph.edges.emplace_back(e[0].get<int>() - 1, e[1].get<int>() - 1);
    }

    for (const json& js : root.at("subsystems")) {
        check_keys(js,
                   {"A", "B", "C", "D", "Q", "R", "state_rows", "input_rows"},
                   "subsystem " + std::to_string(net.subsystems.size() + 1));
        SubsystemModel s;
        s.B = parse_matrix(js.at("B"), "B");
        s.n = static_cast<int>(s.B.rows());
        s.m = static_cast<int>(s.B.cols());
        s.Q = parse_matrix(js.at("Q"), "Q");
        s.R = parse_matrix(js.at("R"), "R");
        if (js.contains("D")) s.D = parse_matrix(js.at("D"), "D");
        auto parse_blocks = [&](const char* src, std::map<int, Eigen::MatrixXd>& dst) {
            if (!js.contains(src)) return;
            for (auto it = js.at(src).begin(); it != js.at(src).end(); ++it) {
                int j;
                try {
                    j = std::stoi(it.key());
                } catch (...) {
                    throw ConfigError(std::string(src) + " block key must be a subsystem number");
                }
                dst[j - 1] = parse_matrix(it.value(), src);
            }
        };
        parse_blocks("A", s.A_blocks);
        parse_blocks("C", s.C_blocks);
        if (js.contains("state_rows")) s.state_rows = parse_rows(js.at("state_rows"), "state_rows");
        if (js.contains("input_rows")) s.input_rows = parse_rows(js.at("input_rows"), "input_rows");
        net.subsystems.push_back(std::move(s));
    }

    if (root.contains("mpc")) {
        const json& mp = root.at("mpc");
        check_keys(mp, {"N", "eps", "rho", "eps_c", "max_iter", "cov_scale", "cov_trace_weight"},
                   "mpc");
        auto& p = net.mpc;
        if (mp.contains("N")) p.N = mp.at("N").get<int>();
        if (mp.contains("eps")) p.eps = mp.at("eps").get<double>();
        if (mp.contains("rho")) p.rho = mp.at("rho").get<double>();
        if (mp.contains("eps_c")) p.eps_c = mp.at("eps_c").get<double>();
        if (mp.contains("max_iter")) p.max_iter = mp.at("max_iter").get<int>();
        if (mp.contains("cov_scale")) p.cov_scale = mp.at("cov_scale").get<double>();
        if (mp.contains("cov_trace_weight"))
            p.cov_trace_weight = mp.at("cov_trace_weight").get<double>();
    }
    if (root.contains("synthesis")) {
        const json& sy = root.at("synthesis");
        check_keys(sy, {"kappa", "q_margin"}, "synthesis");
        if (sy.contains("kappa")) net.synthesis.kappa = sy.at("kappa").get<double>();
        if (sy.contains("q_margin")) net.synthesis.q_margin = sy.at("q_margin").get<double>();
    }
    if (root.contains("simulation")) {
        const json& sim = root.at("simulation");
        check_keys(sim, {"runs", "steps", "seed", "x0"}, "simulation");
        if (sim.contains("runs")) net.sim.runs = sim.at("runs").get<int>();
        if (sim.contains("steps")) net.sim.steps = sim.at("steps").get<int>();
        if (sim.contains("seed")) net.sim.seed = sim.at("seed").get<std::uint64_t>();
        if (sim.contains("x0")) net.sim.x0 = parse_vector(sim.at("x0"), "simulation.x0");
    }

    validate_network(net);
    return net;
}

NetworkModel load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open model config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return build_network(ss.str());
}

std::string model_hash(const NetworkModel& net) {
    // covers everything the offline design depends on; runtime knobs
    // (eps_c, simulation section) deliberately excluded
    std::uint64_t h = 0xcbf29ce484222325ULL;
    hash_mix(h, "M" + std::to_string(net.M()));
    for (auto [a, b] : net.graph.edges)
        hash_mix(h, "e" + std::to_string(a) + "," + std::to_string(b));
    for (const auto& s : net.subsystems) {
        for (const auto& [j, blk] : s.A_blocks) {
            hash_mix(h, "A" + std::to_string(j));
            hash_matrix(h, blk);
        }
        for (const auto& [j, blk] : s.C_blocks) {
            hash_mix(h, "C" + std::to_string(j));
            hash_matrix(h, blk);
        }
        hash_mix(h, "B");
        hash_matrix(h, s.B);
        hash_mix(h, "D");
        hash_matrix(h, s.D);
        hash_mix(h, "Q");
        hash_matrix(h, s.Q);
        hash_mix(h, "R");
        hash_matrix(h, s.R);
        for (const auto* rows : {&s.state_rows, &s.input_rows}) {
            for (const auto& r : *rows) {
                hash_matrix(h, r.H);
                hash_matrix(h, Eigen::MatrixXd::Constant(1, 1, r.h));
                hash_matrix(h, Eigen::MatrixXd::Constant(1, 1, r.p));
                hash_matrix(h, Eigen::MatrixXd::Constant(1, 1, r.factor));
            }
            hash_mix(h, "|");
        }
    }
    hash_matrix(h, Eigen::MatrixXd::Constant(1, 1, net.mpc.eps));
    hash_matrix(h, Eigen::MatrixXd::Constant(1, 1, net.synthesis.kappa));
    hash_matrix(h, Eigen::MatrixXd::Constant(1, 1, net.synthesis.q_margin));
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

LocalMaps local_maps(const NetworkModel& net, int i) {
    const auto& s = net.subsystems[i];
    LocalMaps lm;
    lm.A.resize(s.n, net.nbhd_dim(i));
    lm.C.resize(s.n, net.nbhd_dim(i));
    int at = 0;
    for (int j : net.neighbors(i)) {
        lm.A.middleCols(at, net.subsystems[j].n) = s.A_blocks.at(j);
        lm.C.middleCols(at, net.subsystems[j].n) = s.C_blocks.at(j);
        at += net.subsystems[j].n;
    }
    lm.B = s.B;
    lm.D = s.D;
    return lm;
}

GlobalSystem assemble_global(const NetworkModel& net) {
    GlobalSystem gs;
    const int n = net.n, m = net.m;
    gs.A = Eigen::MatrixXd::Zero(n, n);
    gs.C = Eigen::MatrixXd::Zero(n, n);
    gs.B = Eigen::MatrixXd::Zero(n, m);
    gs.D = Eigen::MatrixXd::Zero(n, m);
    gs.Q = Eigen::MatrixXd::Zero(n, n);
    gs.R = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < net.M(); ++i) {
        const auto& s = net.subsystems[i];
        const int ro = net.state_offset[i];
        for (const auto& [j, blk] : s.A_blocks)
            gs.A.block(ro, net.state_offset[j], s.n, net.subsystems[j].n) = blk;
        for (const auto& [j, blk] : s.C_blocks)
            gs.C.block(ro, net.state_offset[j], s.n, net.subsystems[j].n) = blk;
        gs.B.block(ro, net.input_offset[i], s.n, s.m) = s.B;
        gs.D.block(ro, net.input_offset[i], s.n, s.m) = s.D;
        gs.Q.block(ro, ro, s.n, s.n) = s.Q;
        gs.R.block(net.input_offset[i], net.input_offset[i], s.m, s.m) = s.R;
    }
    for (int i = 0; i < net.M(); ++i) {
        const auto& s = net.subsystems[i];
        Eigen::MatrixXd W = Eigen::MatrixXd::Zero(net.nbhd_dim(i), n);
        int at = 0;
        for (int j : net.neighbors(i)) {
            W.block(at, net.state_offset[j], net.subsystems[j].n, net.subsystems[j].n)
                .setIdentity();
            at += net.subsystems[j].n;
        }
        gs.lift.W.push_back(std::move(W));
        Eigen::MatrixXd T = Eigen::MatrixXd::Zero(s.n, n);
        T.block(0, net.state_offset[i], s.n, s.n).setIdentity();
        gs.lift.T.push_back(std::move(T));
    }
    return gs;
}

}  // namespace dsmpc
