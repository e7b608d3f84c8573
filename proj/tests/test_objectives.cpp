#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gfs/gradcheck.hpp"
#include "gfs/objectives.hpp"
#include "gfs/rollout.hpp"
#include "oracles.hpp"

using namespace gfs;
using gfs::testing::GaussianVeOracle;

namespace {

void jitter_params(ParameterStore& params, double scale, std::uint64_t seed) {
    const CounterRng rng(seed);
    std::size_t c = 0;
    for (auto& [name, e] : params) {
        for (double& v : e.value.data) v += scale * (2.0 * rng.uniform(c++) - 1.0);
    }
}

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double spread) {
    const CounterRng rng(seed);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = spread * (2.0 * rng.uniform(i) - 1.0);
    return v;
}

// Batch-mean objective value via the shard builder, with gradients.
double objective_value_with_grads(Objective obj, const ModelConfig& cfg, ParameterStore& params,
                                  const TargetDensity& target, const Schedule& schedule,
                                  const TrajectoryBatch& batch, double lambda, bool want_grad) {
    Tape tape;
    ObjectiveBuild b =
        build_objective_shard(tape, obj, cfg, params, target, schedule, batch, lambda);
    REQUIRE(!b.empty);
    const double norm = objective_norm(obj, schedule, lambda, b.used);
    if (want_grad) tape.backward(b.node, 1.0 / norm);
    return tape.value(b.node).scalar_value() / norm;
}

double grad_norm(const ParameterStore& params, const std::vector<std::string>& prefixes) {
    double acc = 0.0;
    for (double g : params.flat_grads(prefixes)) acc += g * g;
    return std::sqrt(acc);
}

}  // namespace

TEST_CASE("prefix-sum residuals reproduce the direct product form") {
    const int n_steps = 12;
    for (int trial = 0; trial < 500; ++trial) {
        const auto phi = random_values(n_steps + 1, 100 + trial, 5.0);
        const auto logpf = random_values(n_steps, 600 + trial, 5.0);
        const auto logpb = random_values(n_steps, 1100 + trial, 5.0);
        const auto sr = SegmentResiduals::from_arrays(phi, logpf, logpb);
        for (int m = 0; m < n_steps; ++m) {
            for (int n = m + 1; n <= n_steps; ++n) {
                double direct = phi[m] - phi[n];
                for (int l = m; l < n; ++l) direct += logpf[l] - logpb[l];
                CHECK(std::abs(sr.residual(m, n) - direct) <= 1e-10);
            }
        }
    }
}

TEST_CASE("db and tb are exact restrictions of the segment machinery") {
    const int n_steps = 9;
    const auto sr = SegmentResiduals::from_arrays(random_values(n_steps + 1, 7, 3.0),
                                                  random_values(n_steps, 8, 3.0),
                                                  random_values(n_steps, 9, 3.0));
    for (int n = 0; n < n_steps; ++n) {
        const double r = sr.residual(n, n + 1);
        CHECK(sr.db_value(n) == r * r);
    }
    const double rfull = sr.residual(0, n_steps);
    CHECK(sr.tb_value() == rfull * rfull);

    // Perturbing phi[n+1] by delta changes the transition residual by -delta.
    auto phi = random_values(n_steps + 1, 10, 3.0);
    const auto logpf = random_values(n_steps, 11, 3.0);
    const auto logpb = random_values(n_steps, 12, 3.0);
    const double before = SegmentResiduals::from_arrays(phi, logpf, logpb).residual(4, 5);
    phi[5] += 0.25;
    const double after = SegmentResiduals::from_arrays(phi, logpf, logpb).residual(4, 5);
    CHECK(after == doctest::Approx(before - 0.25).epsilon(1e-12));

    // Scaling mu by 2 shifts the closing flow by ln 2 and the full residual
    // down by the same amount, so the optimal c0 moves up by ln 2.
    phi = random_values(n_steps + 1, 13, 3.0);
    const double r0 = SegmentResiduals::from_arrays(phi, logpf, logpb).residual(0, n_steps);
    phi[n_steps] += std::log(2.0);
    const double r1 = SegmentResiduals::from_arrays(phi, logpf, logpb).residual(0, n_steps);
    CHECK(r1 == doctest::Approx(r0 - std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("lambda weighting: mean at lambda=1, weight cancellation at zero residual") {
    const int n_steps = 8;
    const auto sr = SegmentResiduals::from_arrays(random_values(n_steps + 1, 21, 2.0),
                                                  random_values(n_steps, 22, 2.0),
                                                  random_values(n_steps, 23, 2.0));
    double acc = 0.0;
    int count = 0;
    for (int m = 0; m < n_steps; ++m) {
        for (int n = m + 1; n <= n_steps; ++n) {
            acc += sr.residual(m, n) * sr.residual(m, n);
            ++count;
        }
    }
    CHECK(sr.subtb_value(1.0) == doctest::Approx(acc / count).epsilon(1e-12));

    // All residuals zero: every lambda gives exactly zero.
    std::vector<double> phi(n_steps + 1, 0.0), logpf(n_steps, 0.0), logpb(n_steps, 0.0);
    const auto zero = SegmentResiduals::from_arrays(phi, logpf, logpb);
    for (double lambda : {0.5, 1.0, 2.0, 3.0}) CHECK(zero.subtb_value(lambda) == 0.0);

    // Large lambda at N=100 stays finite thanks to the scaled weights.
    CHECK(std::isfinite(subtb_weight_sum(2.0, 100)));
    CHECK(std::isfinite(subtb_weight(2.0, 1, 100)));
}

TEST_CASE("N=1 subtrajectory loss equals the single-transition db loss") {
    const TargetDensity target = make_gaussian(1, 0.7, 0.4);
    const Schedule s = Schedule::ve(2, 0.1, 1.0);  // schedules need N >= 2
    ModelConfig cfg{.dim = 1};
    ParameterStore params = init_params(cfg, 5);
    jitter_params(params, 0.05, 6);
    StreamKey key{3, stream_purpose::kTrain, 0};
    const TrajectoryBatch tb = rollout(cfg, params, s, target, 1, 1.0, key, ExecPolicy{});
    const Trajectory traj = tb.extract(0);

    const auto sr = SegmentResiduals::from_model(cfg, params, target, s, traj);
    // Restricting to the first transition: one segment, weights cancel.
    const auto one = SegmentResiduals::from_arrays({sr.phi[0], sr.phi[1]}, {sr.prefix[1]},
                                                   {0.0});
    CHECK(one.subtb_value(2.0) == doctest::Approx(sr.db_value(0)).epsilon(1e-12));
    CHECK(db_loss(traj, 0, cfg, params, target, s) == sr.db_value(0));
    CHECK(tb_loss(traj, cfg, params, target, s) == sr.tb_value());
    CHECK(subtb_loss(traj, cfg, params, target, s, 2.0) ==
          doctest::Approx(sr.subtb_value(2.0)).epsilon(1e-12));
}

TEST_CASE("linear-Gaussian oracle zeroes every residual and every loss") {
    const Schedule s = Schedule::ve(30, 0.05, 1.0);
    const GaussianVeOracle oracle{s, 2, 2.7, 1.3};
    for (int trial = 0; trial < 100; ++trial) {
        const Trajectory traj = gfs::testing::random_ve_states(s, 2, 40 + trial, 1.5);
        std::vector<double> phi, logpf;
        gfs::testing::fill_optimal(oracle, traj, phi, logpf);
        const auto sr = SegmentResiduals::from_arrays(phi, logpf, traj.logpb);
        for (int m = 0; m <= s.n_steps; ++m) {
            for (int n = m + 1; n <= s.n_steps; ++n) {
                CHECK(std::abs(sr.residual(m, n)) <= 1e-9);
            }
        }
        CHECK(sr.subtb_value(2.0) <= 1e-9);
        CHECK(sr.tb_value() <= 1e-18);
    }
}

TEST_CASE("batched subtb agrees with the per-trajectory value") {
    const TargetDensity target = make_gaussian(2, 1.3, 0.8);
    const Schedule s = Schedule::ve(12, 0.05, 1.0);
    ModelConfig cfg{.dim = 2};
    ParameterStore params = init_params(cfg, 15);
    jitter_params(params, 0.05, 16);
    StreamKey key{5, stream_purpose::kTrain, 2};
    const TrajectoryBatch tb = rollout(cfg, params, s, target, 7, 1.0, key, ExecPolicy{});

    const double batched = objective_value_with_grads(Objective::SubTB, cfg, params, target, s,
                                                      tb, 2.0, false);
    double by_hand = 0.0;
    for (std::size_t b = 0; b < tb.batch; ++b) {
        by_hand += subtb_loss(tb.extract(b), cfg, params, target, s, 2.0);
    }
    by_hand /= static_cast<double>(tb.batch);
    CHECK(batched == doctest::Approx(by_hand).epsilon(1e-9));

    const double tb_batched =
        objective_value_with_grads(Objective::TB, cfg, params, target, s, tb, 2.0, false);
    double tb_by_hand = 0.0;
    for (std::size_t b = 0; b < tb.batch; ++b) {
        tb_by_hand += tb_loss(tb.extract(b), cfg, params, target, s);
    }
    CHECK(tb_batched == doctest::Approx(tb_by_hand / tb.batch).epsilon(1e-9));
}

TEST_CASE("kl_pis at zero drift reduces to the terminal ratio") {
    const TargetDensity target = make_gaussian(2, 2.0, 0.9);
    const Schedule s = Schedule::ve(20, 0.05, 1.0);
    ModelConfig cfg{.dim = 2};
    const ParameterStore params = init_params(cfg, 77);  // zero drift

    StreamKey key{123, stream_purpose::kLossSample, 0};
    const TrajectoryBatch tb = rollout(cfg, params, s, target, 64, 1.0, key, ExecPolicy{});
    double expected = 0.0;
    std::vector<double> xn(2);
    for (std::size_t b = 0; b < tb.batch; ++b) {
        tb.states[s.n_steps].copy_col(b, xn);
        expected += ref_marginal_logpdf(s, s.n_steps, xn) - target.log_mu(xn);
    }
    expected /= static_cast<double>(tb.batch);

    ParameterStore mut = init_params(cfg, 77);
    const double loss = kl_pis_loss(cfg, mut, target, s, 64, 123);
    CHECK(loss == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("kl_pis batch mean estimates a nonnegative divergence on mog") {
    const TargetDensity target = make_mog();
    ModelConfig cfg{.dim = 2};
    ParameterStore params = init_params(cfg, 3);  // reference process
    const Schedule s = Schedule::ve(100, 0.05, 1.0);

    std::vector<double> chunk_means;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        chunk_means.push_back(kl_pis_loss(cfg, params, target, s, 1000, 7000 + seed));
    }
    double mean = 0.0;
    for (double v : chunk_means) mean += v;
    mean /= chunk_means.size();
    double var = 0.0;
    for (double v : chunk_means) var += (v - mean) * (v - mean);
    var /= (chunk_means.size() - 1);
    const double se = std::sqrt(var / chunk_means.size());
    // At zero drift the loss is KL(Q_ref || P) >= 0, and log Z = 0 for mog.
    CHECK(mean > -3.0 * se);
    CHECK(mean > 0.5);  // the mixture is far from the reference terminal law
}

TEST_CASE("kl_dds zero-control cost and beta-schedule stationarity") {
    const TargetDensity target = make_gaussian(2, 1.0, 0.0);
    ModelConfig cfg{.dim = 2};
    ParameterStore params = init_params(cfg, 9);

    const Schedule vp1 = Schedule::vp(20, 1.0, 0.02, 0.3);
    const Schedule vp2 = Schedule::vp(20, 1.0, 0.1, 0.1);
    // With zero control the loss is the terminal ratio only; its expectation
    // under the stationary reference does not depend on the beta schedule.
    std::vector<double> m1, m2;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        m1.push_back(kl_dds_loss(cfg, params, target, vp1, 500, 50 + seed));
        m2.push_back(kl_dds_loss(cfg, params, target, vp2, 500, 150 + seed));
    }
    auto mean_se = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        m /= v.size();
        double var = 0.0;
        for (double x : v) var += (x - m) * (x - m);
        var /= (v.size() - 1);
        return std::make_pair(m, std::sqrt(var / v.size()));
    };
    const auto [mu1, se1] = mean_se(m1);
    const auto [mu2, se2] = mean_se(m2);
    CHECK(std::abs(mu1 - mu2) <= 3.0 * std::sqrt(se1 * se1 + se2 * se2));
}

TEST_CASE("finite-difference gradchecks for every loss at N=3") {
    const Schedule ve = Schedule::ve(3, 0.1, 1.0);
    const Schedule vp = Schedule::vp(3, 1.0, 0.05, 0.2);
    const TargetDensity gauss = make_gaussian(1, 0.8, 0.3);

    ModelConfig cfg{.dim = 1};
    cfg.time_embed_dim = 8;
    cfg.hidden = 8;

    auto check_objective = [&](Objective obj, const Schedule& s, const TargetDensity& target,
                               std::uint64_t seed) {
        ParameterStore params = init_params(cfg, seed);
        jitter_params(params, 0.08, seed + 1);
        StreamKey key{seed, stream_purpose::kTrain, 0};
        const TrajectoryBatch tb = rollout(cfg, params, s, target, 3, 1.0, key, ExecPolicy{});
        auto loss = [&](ParameterStore& st, bool want_grad) {
            return objective_value_with_grads(obj, cfg, st, target, s, tb, 2.0, want_grad);
        };
        INFO(objective_name(obj));
        CHECK(gradcheck(loss, params, 1e-5) <= 1e-6);
    };

    check_objective(Objective::SubTB, ve, gauss, 100);
    check_objective(Objective::DB, ve, gauss, 200);
    check_objective(Objective::TB, ve, gauss, 300);
    check_objective(Objective::KlPis, ve, gauss, 400);
    check_objective(Objective::KlDds, vp, gauss, 500);

    // Exercise the softmax score path through x as well.
    ModelConfig cfg2{.dim = 2};
    cfg2.time_embed_dim = 8;
    cfg2.hidden = 8;
    const TargetDensity mog = make_mog();
    ParameterStore params = init_params(cfg2, 600);
    jitter_params(params, 0.08, 601);
    StreamKey key{600, stream_purpose::kTrain, 0};
    const TrajectoryBatch tb = rollout(cfg2, params, ve, mog, 2, 1.0, key, ExecPolicy{});
    auto loss = [&](ParameterStore& st, bool want_grad) {
        return objective_value_with_grads(Objective::KlPis, cfg2, st, mog, ve, tb, 2.0,
                                          want_grad);
    };
    CHECK(gradcheck(loss, params, 1e-5) <= 1e-6);
}

TEST_CASE("zero residuals kill the subtb gradient; a kl path gradient survives") {
    // gamma^2 = N h sigma^2 makes the zero-drift model exactly optimal, and
    // the oracle kernel coincides with the model's own forward kernel.
    const Schedule s = Schedule::ve(20, 0.05, 1.0);
    const double gamma2 = s.n_steps * s.h;
    const GaussianVeOracle oracle{s, 1, gamma2, 0.7};
    const TargetDensity target = oracle.target();

    ModelConfig cfg{.dim = 1};
    cfg.time_embed_dim = 8;
    cfg.hidden = 8;
    ParameterStore params = init_params(cfg, 9);  // zero drift = optimal here

    StreamKey key{4, stream_purpose::kTrain, 1};
    const TrajectoryBatch tb = rollout(cfg, params, s, target, 4, 1.0, key, ExecPolicy{});

    ParameterStore aux;
    aux.add("dphi", Tensor::zeros({1, 1}));

    Tape t;
    std::vector<NodeRef> phi_rows, delta_rows;
    std::vector<double> col(1);
    for (int n = 0; n <= s.n_steps; ++n) {
        Tensor row = Tensor::zeros({1, tb.batch});
        for (std::size_t b = 0; b < tb.batch; ++b) {
            tb.states[n].copy_col(b, col);
            row.data[b] = oracle.optimal_phi(n, col);
        }
        NodeRef ones = t.constant(Tensor::full({1, tb.batch}, 1.0));
        NodeRef shift = t.affine(t.param(aux, "dphi"), t.constant(Tensor::zeros({1})), ones);
        phi_rows.push_back(t.add(t.constant(std::move(row)), shift));
    }
    for (int n = 0; n < s.n_steps; ++n) {
        NodeRef x_node = t.constant(tb.states[n]);
        NodeRef f = taped_drift(t, cfg, params, target, s.sigma, x_node, n, s.n_steps, false);
        NodeRef mean = t.add(x_node, t.scalar_mul(f, s.h));
        NodeRef diff = t.sub(t.constant(tb.states[n + 1]), mean);
        NodeRef q = t.sum_cols(t.square(diff));
        const double var = s.h * s.sigma * s.sigma;
        NodeRef lf = t.add(t.scalar_mul(q, -0.5 / var),
                           t.constant(Tensor::full({1, tb.batch},
                                                   -0.5 * (std::log(2 * M_PI * var)))));
        Tensor lb = Tensor::zeros({1, tb.batch});
        for (std::size_t b = 0; b < tb.batch; ++b) lb.data[b] = tb.logpb.data[n * tb.batch + b];
        delta_rows.push_back(t.sub(lf, t.constant(std::move(lb))));
    }
    // u_n = phi_n - prefix_n via pairwise adds, then the weighted segment sum.
    std::vector<NodeRef> u_rows;
    NodeRef running = t.constant(Tensor::zeros({1, tb.batch}));
    u_rows.push_back(t.sub(phi_rows[0], running));
    for (int n = 0; n < s.n_steps; ++n) {
        running = t.add(running, delta_rows[n]);
        u_rows.push_back(t.sub(phi_rows[n + 1], running));
    }
    NodeRef u = t.concat_rows(u_rows);
    NodeRef acc{};
    bool first = true;
    for (int g = 1; g <= s.n_steps; ++g) {
        NodeRef diff = t.sub(t.slice_rows(u, 0, s.n_steps + 1 - g),
                             t.slice_rows(u, g, s.n_steps + 1));
        NodeRef term = t.scalar_mul(t.sum(t.square(diff)), subtb_weight(2.0, g, s.n_steps));
        acc = first ? term : t.add(acc, term);
        first = false;
    }
    params.zero_grads();
    aux.zero_grads();
    t.backward(acc, 1.0 / (subtb_weight_sum(2.0, s.n_steps) * tb.batch));

    CHECK(std::isfinite(t.value(acc).scalar_value()));
    CHECK(grad_norm(params, {"drift."}) <= 1e-8);
    CHECK(std::abs(aux.grad("dphi").data[0]) <= 1e-8);

    // A single kl_pis path at the same optimum still carries gradient noise.
    ParameterStore params2 = init_params(cfg, 9);
    StreamKey key2{11, stream_purpose::kTrain, 2};
    const TrajectoryBatch one = rollout(cfg, params2, s, target, 1, 1.0, key2, ExecPolicy{});
    params2.zero_grads();
    objective_value_with_grads(Objective::KlPis, cfg, params2, target, s, one, 2.0, true);
    CHECK(grad_norm(params2, {"drift."}) > 1e-6);
}

TEST_CASE("objective parsing, prefixes and schedule-kind guards") {
    CHECK(parse_objective("subtb") == Objective::SubTB);
    CHECK(parse_objective("kl_dds") == Objective::KlDds);
    CHECK(objective_name(parse_objective("subtb_full")) == "subtb_full");
    CHECK_THROWS_AS(parse_objective("vi_nf"), std::invalid_argument);
    CHECK(objective_param_prefixes(Objective::KlPis) == std::vector<std::string>{"drift."});

    const TargetDensity gauss = make_gaussian(1, 1.0, 0.0);
    ModelConfig cfg{.dim = 1};
    cfg.time_embed_dim = 8;
    cfg.hidden = 8;
    ParameterStore params = init_params(cfg, 1);
    const Schedule vp = Schedule::vp(3, 1.0, 0.05, 0.2);
    CHECK_THROWS_AS(kl_pis_loss(cfg, params, gauss, vp, 2, 1), std::invalid_argument);
    const Schedule ve = Schedule::ve(3, 0.1, 1.0);
    CHECK_THROWS_AS(kl_dds_loss(cfg, params, gauss, ve, 2, 1), std::invalid_argument);
}
