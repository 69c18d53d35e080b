#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "entcell/localization.h"
#include "entcell/metrics.h"
#include "entcell/rng.h"

using namespace entcell;

namespace {

// Scalar re-implementations kept deliberately independent of the library
// code paths they check.
double oracle_answer_score(const std::vector<double> & probs, const std::vector<int> & ids) {
    double best = 0.0;
    for (int id : ids) best = std::max(best, probs[static_cast<size_t>(id)]);
    return best;
}

bool oracle_pass_at_k(const std::vector<double> & logits, const std::vector<int> & ids, int k) {
    std::vector<int> order(logits.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (logits[static_cast<size_t>(a)] != logits[static_cast<size_t>(b)]) {
            return logits[static_cast<size_t>(a)] > logits[static_cast<size_t>(b)];
        }
        return a < b;
    });
    for (int i = 0; i < k; ++i) {
        for (int id : ids) {
            if (order[static_cast<size_t>(i)] == id) return true;
        }
    }
    return false;
}

double oracle_zscore(double a, double mu, double sigma, double eps) { return (a - mu) / (sigma + eps); }

std::vector<double> normalized_random(Rng & rng, size_t n) {
    std::vector<double> p(n);
    double z = 0.0;
    for (auto & v : p) {
        v = rng.uniform() + 1e-6;
        z += v;
    }
    for (auto & v : p) v /= z;
    return p;
}

} // namespace

TEST_CASE("answer_score basics") {
    std::vector<double> p(128, 0.0);
    p[7] = 0.25;
    double rest = (1.0 - 0.25) / 127.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (i != 7) p[i] = rest;
    }
    CHECK(answer_score(p, AnswerTargets{{7}}) == doctest::Approx(0.25).epsilon(1e-12));

    std::vector<double> q(16, 0.0);
    q[3] = 0.1;
    q[9] = 0.4;
    double fill = 0.5 / 14.0;
    for (size_t i = 0; i < q.size(); ++i) {
        if (i != 3 && i != 9) q[i] = fill;
    }
    CHECK(answer_score(q, AnswerTargets{{3, 9}}) == doctest::Approx(0.4).epsilon(1e-12));

    std::vector<double> u(128, 1.0 / 128.0);
    CHECK(answer_score(u, AnswerTargets{{17}}) == doctest::Approx(1.0 / 128.0).epsilon(1e-12));

    CHECK_THROWS_AS(answer_score(u, AnswerTargets{}), data_error);
    std::vector<double> bad(8, 0.2);
    CHECK_THROWS_AS(answer_score(bad, AnswerTargets{{0}}), data_error);
}

TEST_CASE("pass_at_k basics and boundaries") {
    std::vector<double> logits = {9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0};
    CHECK(pass_at_k(logits, AnswerTargets{{2}}, 5));       // ranked 3rd
    CHECK_FALSE(pass_at_k(logits, AnswerTargets{{5}}, 5)); // ranked 6th
    CHECK(pass_at_k(logits, AnswerTargets{{7}}, 8));       // k = V
    CHECK_THROWS_AS(pass_at_k(logits, AnswerTargets{{0}}, 9), data_error);
    CHECK_THROWS_AS(pass_at_k(logits, AnswerTargets{{0}}, 0), data_error);

    // Ties at the k-th logit break toward the lower token id.
    std::vector<double> tied = {1.0, 1.0, 1.0, 0.0};
    CHECK(pass_at_k(tied, AnswerTargets{{1}}, 2));
    CHECK_FALSE(pass_at_k(tied, AnswerTargets{{2}}, 2));
}

TEST_CASE("zscore spec values") {
    CHECK(zscore(5.0, 3.0, 2.0, 1e-6) == doctest::Approx(0.9999995).epsilon(1e-9));
    CHECK(zscore(3.0, 3.0, 0.0, 1e-6) == 0.0);
    CHECK(zscore(4.0, 3.0, 0.0, 1e-6) == doctest::Approx(1e6).epsilon(1e-12));
}

TEST_CASE("stability_scores spec values") {
    // z over two prompts on a single channel.
    {
        std::vector<double> z = {2.0, 2.0};
        auto t = stability_scores(z, 2, 1, 1, 1e-6);
        CHECK(t.score[0] == doctest::Approx(4e6).epsilon(1e-9));
    }
    {
        std::vector<double> z = {1.0, 3.0};
        auto t = stability_scores(z, 2, 1, 1, 1e-6);
        CHECK(t.score[0] == doctest::Approx(4.0 / (1.0 + 1e-6)).epsilon(1e-12));
        CHECK(t.mean_z[0] == doctest::Approx(2.0));
        CHECK(t.std_z[0] == doctest::Approx(1.0));
    }
    {
        std::vector<double> z = {0.0, 0.0};
        auto t = stability_scores(z, 2, 1, 1, 1e-6);
        CHECK(t.score[0] == 0.0);
    }
    // K = 1 degenerates to z^2 / eps.
    {
        std::vector<double> z = {3.0};
        auto t = stability_scores(z, 1, 1, 1, 1e-6);
        CHECK(t.score[0] == doctest::Approx(9e6).epsilon(1e-9));
    }
}

TEST_CASE("amnesia_score anchors") {
    CHECK(amnesia_score(-1.0, -8.0, -1.0) == doctest::Approx(1.0));
    CHECK(amnesia_score(-8.0, -8.0, -1.0) == doctest::Approx(0.0));
    CHECK(amnesia_score(-4.5, -8.0, -1.0) == doctest::Approx(0.5));
    CHECK(amnesia_score(-20.0, -8.0, -1.0) == 0.0);  // clipped
    CHECK(amnesia_score(0.5, -8.0, -1.0) == 1.0);    // clipped
    CHECK_THROWS_AS(amnesia_score(-1.0, -1.0, -1.0), numeric_error);

    // Invariant under a joint strictly increasing affine map.
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        double u = -10.0 - rng.uniform();
        double p = -1.0 - rng.uniform();
        double c = u + (p - u) * rng.uniform() * 1.4 - 0.2;
        double a = 0.1 + 3.0 * rng.uniform();
        double b = -5.0 + 10.0 * rng.uniform();
        double s1 = amnesia_score(c, u, p);
        double s2 = amnesia_score(a * c + b, a * u + b, a * p + b);
        CHECK(s1 == doctest::Approx(s2).epsilon(1e-9));
    }
}

TEST_CASE("metric oracles on random instances") {
    Rng rng(2024);
    const double tol = 1e-9;
    for (int iter = 0; iter < 1000; ++iter) {
        size_t v = 8 + rng.below(120);
        std::vector<double> probs = normalized_random(rng, v);
        std::vector<double> logits(v);
        for (auto & x : logits) x = rng.uniform(-6.0, 6.0);
        if (iter % 3 == 0) {
            // inject ties
            logits[rng.below(v)] = logits[rng.below(v)];
        }
        std::vector<int> ids;
        size_t n_ids = 1 + rng.below(4);
        for (size_t i = 0; i < n_ids; ++i) ids.push_back(static_cast<int>(rng.below(v)));
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        AnswerTargets targets{ids};

        double got = answer_score(probs, targets);
        double want = oracle_answer_score(probs, ids);
        CHECK(std::abs(got - want) <= tol * std::max(1.0, std::abs(want)));

        int k = 1 + static_cast<int>(rng.below(v));
        CHECK(pass_at_k(logits, targets, k) == oracle_pass_at_k(logits, ids, k));
        // monotone in k
        bool prev = false;
        for (int kk = 1; kk <= static_cast<int>(v); ++kk) {
            bool now = pass_at_k(logits, targets, kk);
            CHECK((!prev || now));
            prev = now;
        }

        double a = rng.uniform(-10, 10), mu = rng.uniform(-10, 10), sd = rng.uniform(0, 5);
        CHECK(zscore(a, mu, sd, 1e-6) ==
              doctest::Approx(oracle_zscore(a, mu, sd, 1e-6)).epsilon(tol));
    }
}

TEST_CASE("stability_scores matches scalar double loop") {
    Rng rng(7);
    const int K = 5, L = 4, M = 16;
    std::vector<double> z(static_cast<size_t>(K) * L * M);
    for (auto & v : z) v = rng.uniform(-4.0, 4.0);
    auto table = stability_scores(z, K, L, M, 1e-6);
    for (int l = 0; l < L; ++l) {
        for (int j = 0; j < M; ++j) {
            double mean = 0.0;
            for (int p = 0; p < K; ++p) mean += z[(static_cast<size_t>(p) * L + l) * M + j];
            mean /= K;
            double var = 0.0;
            for (int p = 0; p < K; ++p) {
                double dd = z[(static_cast<size_t>(p) * L + l) * M + j] - mean;
                var += dd * dd;
            }
            var /= K;
            double want = mean * mean / (std::sqrt(var) + 1e-6);
            double got = table.score_at(NeuronId{l, j});
            CHECK(got == doctest::Approx(want).epsilon(1e-9));
        }
    }
}

TEST_CASE("running stats merge equals single pass") {
    Rng rng(99);
    const int L = 3, M = 8, N = 50;
    std::vector<std::vector<double>> samples;
    for (int i = 0; i < N; ++i) {
        std::vector<double> s(static_cast<size_t>(L) * M);
        for (auto & v : s) v = rng.uniform(-3.0, 7.0);
        samples.push_back(std::move(s));
    }
    RunningStats single(L, M);
    for (const auto & s : samples) single.add_sample(s);

    RunningStats merged(L, M);
    for (int chunk = 0; chunk < 5; ++chunk) {
        RunningStats part(L, M);
        for (int i = chunk * 10; i < (chunk + 1) * 10; ++i) part.add_sample(samples[static_cast<size_t>(i)]);
        merged.merge(part);
    }
    auto a = single.finalize(1e-6);
    auto b = merged.finalize(1e-6);
    for (size_t i = 0; i < a.mu.size(); ++i) {
        CHECK(a.mu[i] == doctest::Approx(b.mu[i]).epsilon(1e-9));
        CHECK(a.sigma[i] == doctest::Approx(b.sigma[i]).epsilon(1e-9));
    }

    // Two-sample population convention: {1, 3} -> mu 2, sigma 1.
    RunningStats two(1, 1);
    two.add_sample(std::vector<double>{1.0});
    two.add_sample(std::vector<double>{3.0});
    auto st = two.finalize(1e-6);
    CHECK(st.mu[0] == doctest::Approx(2.0));
    CHECK(st.sigma[0] == doctest::Approx(1.0));

    // Identical samples -> zero sigma.
    RunningStats same(1, 1);
    same.add_sample(std::vector<double>{2.5});
    same.add_sample(std::vector<double>{2.5});
    same.add_sample(std::vector<double>{2.5});
    CHECK(same.finalize(1e-6).sigma[0] == doctest::Approx(0.0));

    RunningStats one(1, 1);
    one.add_sample(std::vector<double>{1.0});
    CHECK_THROWS_AS(one.finalize(1e-6), data_error);
}

TEST_CASE("stability shift and scale covariance") {
    Rng rng(5);
    const int K = 6, L = 2, M = 4;

    // Raw activations for baselines and probes on one synthetic channel set.
    const int B = 40;
    std::vector<std::vector<double>> base(B), probe(K);
    for (auto & s : base) {
        s.resize(static_cast<size_t>(L) * M);
        for (auto & v : s) v = rng.uniform(1.0, 9.0);
    }
    for (auto & s : probe) {
        s.resize(static_cast<size_t>(L) * M);
        for (auto & v : s) v = rng.uniform(1.0, 9.0);
    }

    auto score_of = [&](double shift, double scale) {
        RunningStats rs(L, M);
        for (const auto & s : base) {
            std::vector<double> t = s;
            for (auto & v : t) v = v * scale + shift;
            rs.add_sample(t);
        }
        auto stats = rs.finalize(1e-6);
        std::vector<double> z(static_cast<size_t>(K) * L * M);
        for (int p = 0; p < K; ++p) {
            for (size_t c = 0; c < static_cast<size_t>(L) * M; ++c) {
                z[static_cast<size_t>(p) * L * M + c] =
                    zscore(probe[static_cast<size_t>(p)][c] * scale + shift, stats.mu[c],
                           stats.sigma[c], 1e-6);
            }
        }
        return stability_scores(z, K, L, M, 1e-6);
    };

    auto plain = score_of(0.0, 1.0);
    auto shifted = score_of(3.7, 1.0);
    auto scaled = score_of(0.0, 2.5);
    for (size_t c = 0; c < plain.score.size(); ++c) {
        CHECK(shifted.score[c] == doctest::Approx(plain.score[c]).epsilon(1e-6));
        CHECK(scaled.score[c] == doctest::Approx(plain.score[c]).epsilon(1e-6));
    }
}

TEST_CASE("ranking is a permutation with deterministic tie-break") {
    std::vector<double> z = {1.0, 1.0, 2.0, 1.0, 1.0, 2.0, 0.5, 3.0};  // K=2, L=2, M=2
    auto table = stability_scores(z, 2, 2, 2, 1e-6);
    auto ranking = rank_cells(table);
    CHECK(ranking.size() == 4);
    std::set<std::pair<int, int>> seen;
    for (const auto & r : ranking) seen.insert({r.cell.layer, r.cell.neuron});
    CHECK(seen.size() == 4);
    for (size_t i = 1; i < ranking.size(); ++i) {
        CHECK(ranking[i - 1].score >= ranking[i].score);
    }
}
