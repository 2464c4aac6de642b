#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <tuple>
#include <vector>

#include "tridistill/gradcheck.hpp"
#include "tridistill/losses.hpp"
#include "tridistill/rng.hpp"
#include "tridistill/tensor.hpp"

using namespace tridistill;

namespace {

Tensor<double> random_probs(int r, int k, Rng& rng) {
    Tensor<double> t({r, k});
    for (int i = 0; i < r; ++i) {
        double sum = 0;
        for (int c = 0; c < k; ++c) {
            t.at2(i, c) = rng.uniform01() + 0.05;
            sum += t.at2(i, c);
        }
        for (int c = 0; c < k; ++c) t.at2(i, c) /= sum;
    }
    return t;
}

Tensor<double> random_values(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& x : t.data) x = rng.uniform(-scale, scale);
    return t;
}

double scalar(const Var<double>& v) { return v->value.data[0]; }

double mean_row_entropy(const Tensor<double>& probs) {
    const int r = probs.dim(0), k = probs.dim(1);
    double total = 0;
    for (int i = 0; i < r; ++i) {
        double h = 0;
        for (int c = 0; c < k; ++c)
            if (probs.at2(i, c) > 0) h -= probs.at2(i, c) * std::log(probs.at2(i, c));
        total += h;
    }
    return total / r;
}

// Independent re-implementation of the vote used as the oracle: plain
// (non-squared) Euclidean distances and a fresh comparison loop.
TripletIndex oracle_orient(const std::vector<Tensor<double>>& pooled, TripletIndex t) {
    int flag = 0;
    for (const auto& h : pooled) {
        double d12 = 0, d13 = 0;
        for (int j = 0; j < h.dim(1); ++j) {
            d12 += (h.at2(t.anchor, j) - h.at2(t.positive, j)) * (h.at2(t.anchor, j) - h.at2(t.positive, j));
            d13 += (h.at2(t.anchor, j) - h.at2(t.negative, j)) * (h.at2(t.anchor, j) - h.at2(t.negative, j));
        }
        if (std::sqrt(d12) > std::sqrt(d13)) ++flag;
        else --flag;
    }
    if (flag > 0) return {t.anchor, t.negative, t.positive};
    return t;
}

} // namespace

TEST_CASE("kd loss matches hand values") {
    auto uniform_logits = [](int r, int k) { return parameter(Tensor<double>::zeros({r, k})); };

    SECTION("identical distributions give zero") {
        std::vector<Tensor<double>> probs{Tensor<double>({1, 2}, {0.5, 0.5})};
        CHECK(scalar(kd_loss(probs, uniform_logits(1, 2))) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("one-hot teacher against a uniform student gives ln 2") {
        std::vector<Tensor<double>> probs{Tensor<double>({1, 2}, {1.0, 0.0})};
        CHECK(scalar(kd_loss(probs, uniform_logits(1, 2))) == Catch::Approx(std::log(2.0)).epsilon(1e-6));
    }
    SECTION("opposite one-hot teachers average to uniform") {
        std::vector<Tensor<double>> probs{Tensor<double>({1, 2}, {1.0, 0.0}), Tensor<double>({1, 2}, {0.0, 1.0})};
        CHECK(scalar(kd_loss(probs, uniform_logits(1, 2))) == Catch::Approx(0.0).margin(1e-9));
    }
    SECTION("rows are averaged") {
        std::vector<Tensor<double>> probs{Tensor<double>({2, 2}, {1.0, 0.0, 0.5, 0.5})};
        CHECK(scalar(kd_loss(probs, uniform_logits(2, 2))) == Catch::Approx(std::log(2.0) / 2).epsilon(1e-6));
    }
    SECTION("shape mismatches are rejected") {
        std::vector<Tensor<double>> probs{Tensor<double>({1, 3}, {1.0, 0.0, 0.0})};
        CHECK_THROWS_AS(kd_loss(probs, uniform_logits(1, 2)), DataError);
        CHECK_THROWS_AS(kd_loss(std::vector<Tensor<double>>{}, uniform_logits(1, 2)), ConfigError);
    }
}

TEST_CASE("kd loss is nonnegative and vanishes only at the teacher mean") {
    Rng rng(41);
    for (int it = 0; it < 1000; ++it) {
        const int nt = 1 + static_cast<int>(rng.below(3));
        const int r = 1 + static_cast<int>(rng.below(5));
        const int k = 2 + static_cast<int>(rng.below(5));
        std::vector<Tensor<double>> probs;
        for (int j = 0; j < nt; ++j) probs.push_back(random_probs(r, k, rng));

        Tensor<double> qbar({r, k});
        for (int i = 0; i < r; ++i)
            for (int c = 0; c < k; ++c) {
                double s = 0;
                for (const auto& p : probs) s += p.at2(i, c);
                qbar.at2(i, c) = s / nt;
            }

        auto logits = random_values({r, k}, rng, 3.0);
        const double kd = scalar(kd_loss(probs, parameter(logits)));
        REQUIRE(std::isfinite(kd));
        REQUIRE(kd >= -1e-12);

        Tensor<double> at_mean({r, k});
        for (std::size_t i = 0; i < at_mean.size(); ++i) at_mean.data[i] = std::log(qbar.data[i]);
        CHECK(std::abs(scalar(kd_loss(probs, parameter(at_mean)))) < 1e-9);
    }
}

TEST_CASE("sce loss matches hand values") {
    SECTION("confident correct prediction costs nothing") {
        auto logits = parameter(Tensor<double>({1, 2}, {100.0, 0.0}));
        CHECK(scalar(sce_loss(logits, {0})) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("uniform logits over four classes cost ln 4") {
        auto logits = parameter(Tensor<double>::zeros({1, 4}));
        CHECK(scalar(sce_loss(logits, {2})) == Catch::Approx(std::log(4.0)).epsilon(1e-9));
    }
    SECTION("a batch of two averages the per-row losses") {
        const Tensor<double> row_a({1, 3}, {1.0, -0.5, 0.25});
        const Tensor<double> row_b({1, 3}, {-2.0, 0.1, 0.7});
        const double a = scalar(sce_loss(parameter(row_a), {1}));
        const double b = scalar(sce_loss(parameter(row_b), {2}));
        Tensor<double> both({2, 3});
        for (int c = 0; c < 3; ++c) {
            both.at2(0, c) = row_a.at2(0, c);
            both.at2(1, c) = row_b.at2(0, c);
        }
        CHECK(scalar(sce_loss(parameter(both), {1, 2})) == Catch::Approx((a + b) / 2).epsilon(1e-12));
    }
    SECTION("empty targets are rejected") {
        auto logits = parameter(Tensor<double>::zeros({1, 2}));
        CHECK_THROWS_AS(sce_loss(logits, {}), DataError);
    }
}

TEST_CASE("sim loss matches hand values") {
    SECTION("self similarity with two teachers") {
        const Tensor<double> v({2, 3}, {1.0, 2.0, -1.0, 0.5, 0.0, 2.0});
        std::vector<Tensor<double>> teachers{v, v};
        CHECK(scalar(sim_loss(teachers, parameter(v))) == Catch::Approx(-2.0).epsilon(1e-9));
    }
    SECTION("positive rescaling changes nothing") {
        const Tensor<double> v({1, 4}, {1.0, -2.0, 0.5, 3.0});
        Tensor<double> scaled = v;
        for (auto& x : scaled.data) x *= 3.0;
        std::vector<Tensor<double>> teachers{v};
        CHECK(scalar(sim_loss(teachers, parameter(scaled))) == Catch::Approx(-1.0).epsilon(1e-9));
    }
    SECTION("orthogonal vectors score zero") {
        std::vector<Tensor<double>> teachers{Tensor<double>({1, 2}, {1.0, 0.0})};
        auto student = parameter(Tensor<double>({1, 2}, {0.0, 1.0}));
        CHECK(scalar(sim_loss(teachers, student)) == Catch::Approx(0.0).margin(1e-9));
    }
}

TEST_CASE("sim loss is scale invariant and bounded") {
    Rng rng(42);
    for (int it = 0; it < 1000; ++it) {
        const int nt = 1 + static_cast<int>(rng.below(3));
        const int r = 1 + static_cast<int>(rng.below(4));
        const int k = 2 + static_cast<int>(rng.below(5));
        std::vector<Tensor<double>> teachers;
        for (int j = 0; j < nt; ++j) teachers.push_back(random_values({r, k}, rng, 2.0));
        const Tensor<double> student = random_values({r, k}, rng, 2.0);

        const double base = scalar(sim_loss(teachers, parameter(student)));
        REQUIRE(base >= -nt - 1e-9);
        REQUIRE(base <= nt + 1e-9);

        const double alpha = rng.uniform(0.5, 3.0);
        Tensor<double> scaled = student;
        for (auto& x : scaled.data) x *= alpha;
        std::vector<Tensor<double>> scaled_teachers;
        for (auto t : teachers) {
            const double beta = rng.uniform(0.5, 3.0);
            for (auto& x : t.data) x *= beta;
            scaled_teachers.push_back(std::move(t));
        }
        CHECK(scalar(sim_loss(scaled_teachers, parameter(scaled))) == Catch::Approx(base).margin(1e-6));
    }
}

TEST_CASE("triplet draws use three distinct indices and cover every arrangement") {
    Rng rng(7);
    std::set<std::tuple<int, int, int>> seen;
    for (int it = 0; it < 1000; ++it) {
        const auto t = draw_triplet_indices(3, rng);
        REQUIRE(t.anchor != t.positive);
        REQUIRE(t.anchor != t.negative);
        REQUIRE(t.positive != t.negative);
        seen.insert({t.anchor, t.positive, t.negative});
    }
    CHECK(seen.size() == 6);

    for (int it = 0; it < 1000; ++it) {
        const auto t = draw_triplet_indices(8, rng);
        REQUIRE(t.anchor >= 0);
        REQUIRE(t.anchor < 8);
        REQUIRE(t.positive >= 0);
        REQUIRE(t.positive < 8);
        REQUIRE(t.negative >= 0);
        REQUIRE(t.negative < 8);
        REQUIRE(t.anchor != t.positive);
        REQUIRE(t.anchor != t.negative);
        REQUIRE(t.positive != t.negative);
    }
}

TEST_CASE("triplet votes match the hand traces") {
    const std::vector<Tensor<double>> one{Tensor<double>({3, 1}, {0.0, 1.0, 3.0})};

    SECTION("far candidate drawn as positive gets swapped") {
        CHECK(orient_triplet(one, {0, 2, 1}) == TripletIndex{0, 1, 2});
    }
    SECTION("near candidate drawn as positive stays put") {
        CHECK(orient_triplet(one, {0, 1, 2}) == TripletIndex{0, 1, 2});
    }
    SECTION("two opposite votes cancel and nothing moves") {
        const std::vector<Tensor<double>> opposed{Tensor<double>({3, 1}, {0.0, 1.0, 3.0}),
                                                  Tensor<double>({3, 1}, {0.0, 3.0, 1.0})};
        CHECK(orient_triplet(opposed, {0, 2, 1}) == TripletIndex{0, 2, 1});
    }
    SECTION("ties vote against swapping") {
        const std::vector<Tensor<double>> tied{Tensor<double>({3, 1}, {0.0, 1.0, -1.0})};
        CHECK(orient_triplet(tied, {0, 1, 2}) == TripletIndex{0, 1, 2});
        CHECK(orient_triplet(tied, {0, 2, 1}) == TripletIndex{0, 2, 1});
    }
    SECTION("the swap is an involution and exactly one orientation is emitted") {
        Rng rng(11);
        for (int it = 0; it < 200; ++it) {
            std::vector<Tensor<double>> pooled{random_values({5, 3}, rng)};
            const auto draw = draw_triplet_indices(5, rng);
            const TripletIndex swapped{draw.anchor, draw.negative, draw.positive};
            const TripletIndex unswapped{swapped.anchor, swapped.negative, swapped.positive};
            CHECK(unswapped == draw);

            const auto once = orient_triplet(pooled, draw);
            CHECK((once == draw || once == swapped));
            CHECK(orient_triplet(pooled, once) == once);
        }
    }
}

TEST_CASE("generated triplets equal a plain-euclidean oracle on replayed draws") {
    for (uint64_t seed = 100; seed < 200; ++seed) {
        Rng gen(seed);
        Rng replay(seed);
        Rng values(seed ^ 0xabcdef);
        std::vector<Tensor<double>> pooled{random_values({8, 16}, values), random_values({8, 32}, values),
                                           random_values({8, 16}, values)};
        const auto got = generate_triplets(pooled, 8, gen);
        REQUIRE(got.size() == 8);
        for (const auto& t : got) {
            const auto expect = oracle_orient(pooled, draw_triplet_indices(8, replay));
            REQUIRE(t == expect);
        }
    }
}

TEST_CASE("generation is deterministic and validates its inputs") {
    Rng vals(3);
    std::vector<Tensor<double>> pooled{random_values({4, 8}, vals)};
    Rng a(9), b(9);
    CHECK(generate_triplets(pooled, 4, a) == generate_triplets(pooled, 4, b));

    Rng c(9);
    CHECK_THROWS_AS(generate_triplets(pooled, 2, c), DataError);
    CHECK_THROWS_AS(generate_triplets(std::vector<Tensor<double>>{}, 4, c), ConfigError);
    std::vector<Tensor<double>> bad{Tensor<double>::zeros({3, 8})};
    CHECK_THROWS_AS(generate_triplets(bad, 4, c), DataError);
}

TEST_CASE("rel loss matches hand values") {
    auto pooled = parameter(Tensor<double>({3, 2}, {0.0, 0.0, 0.0, 0.1, 1.0, 0.0}));

    CHECK(scalar(rel_loss(pooled, {{0, 1, 2}}, 0.2)) == Catch::Approx(0.0).margin(1e-9));
    CHECK(scalar(rel_loss(pooled, {{0, 2, 1}}, 0.2)) == Catch::Approx(1.1).epsilon(1e-9));
    CHECK(scalar(rel_loss(pooled, {{0, 1, 1}}, 0.2)) == Catch::Approx(0.2).epsilon(1e-9));
    CHECK(scalar(rel_loss(pooled, {{0, 1, 2}, {0, 2, 1}, {0, 1, 1}}, 0.2)) ==
          Catch::Approx((0.0 + 1.1 + 0.2) / 3).epsilon(1e-9));
    CHECK_THROWS_AS(rel_loss(pooled, {}, 0.2), DataError);
}

TEST_CASE("rel loss matches an independent formula on random inputs") {
    Rng rng(43);
    for (int it = 0; it < 1000; ++it) {
        const int n = 3 + static_cast<int>(rng.below(6));
        const int d = 1 + static_cast<int>(rng.below(8));
        const Tensor<double> pooled = random_values({n, d}, rng, 2.0);
        std::vector<TripletIndex> triplets;
        const int m = 1 + static_cast<int>(rng.below(5));
        for (int i = 0; i < m; ++i) triplets.push_back(draw_triplet_indices(n, rng));

        double expect = 0;
        for (const auto& t : triplets) {
            double dp = 0, dn = 0;
            for (int j = 0; j < d; ++j) {
                dp += (pooled.at2(t.anchor, j) - pooled.at2(t.positive, j)) *
                      (pooled.at2(t.anchor, j) - pooled.at2(t.positive, j));
                dn += (pooled.at2(t.anchor, j) - pooled.at2(t.negative, j)) *
                      (pooled.at2(t.anchor, j) - pooled.at2(t.negative, j));
            }
            expect += std::max(std::sqrt(dp) - std::sqrt(dn) + 0.2, 0.0);
        }
        expect /= m;

        const double got = scalar(rel_loss(parameter(pooled), triplets, 0.2));
        REQUIRE(got >= -1e-12);
        REQUIRE(got == Catch::Approx(expect).margin(1e-9));
    }
}

TEST_CASE("tp loss matches hand values") {
    SECTION("one-hot pseudo-label against a uniform student costs ln 2") {
        std::vector<Tensor<double>> probs{Tensor<double>({1, 2}, {1.0, 0.0})};
        auto logits = parameter(Tensor<double>::zeros({1, 2}));
        CHECK(scalar(tp_loss(probs, logits)) == Catch::Approx(std::log(2.0)).epsilon(1e-9));
    }
    SECTION("uniform pseudo-labels are floored at ln k, attained by a uniform student") {
        Rng rng(5);
        Tensor<double> uniform({2, 4});
        for (auto& x : uniform.data) x = 0.25;
        std::vector<Tensor<double>> probs{uniform};
        for (int it = 0; it < 50; ++it) {
            auto logits = parameter(random_values({2, 4}, rng, 3.0));
            CHECK(scalar(tp_loss(probs, logits)) >= std::log(4.0) - 1e-9);
        }
        CHECK(scalar(tp_loss(probs, parameter(Tensor<double>::zeros({2, 4})))) ==
              Catch::Approx(std::log(4.0)).epsilon(1e-12));
    }
    SECTION("identical teachers triple the single-teacher value exactly") {
        Rng rng(6);
        const Tensor<double> p = random_probs(3, 5, rng);
        auto logits = parameter(random_values({3, 5}, rng, 2.0));
        const double single = scalar(tp_loss(std::vector<Tensor<double>>{p}, logits));
        const double triple = scalar(tp_loss(std::vector<Tensor<double>>{p, p, p}, logits));
        CHECK(triple == 3.0 * single);
    }
}

TEST_CASE("loss config parses names and rejects bad settings") {
    const LossConfig def{};
    CHECK(def.kd);
    CHECK(def.sce);
    CHECK(def.sim);
    CHECK(def.rel);
    CHECK_FALSE(def.tp);
    CHECK(def.enabled_names() == "kd,sce,sim,rel");

    const auto parsed = LossConfig::from_names("kd,sce,tp");
    CHECK(parsed.kd);
    CHECK(parsed.sce);
    CHECK(parsed.tp);
    CHECK_FALSE(parsed.sim);
    CHECK_FALSE(parsed.rel);

    CHECK_THROWS_AS(LossConfig::from_names("kd,bogus"), ConfigError);
    CHECK_THROWS_AS(LossConfig::from_names(""), ConfigError);

    LossConfig bad = def;
    bad.margin = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = def;
    bad.p_norm = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = def;
    bad.temperature = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = def;
    bad.kd = bad.sce = bad.sim = bad.rel = bad.tp = false;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

namespace {

struct TotalFixture {
    std::vector<Tensor<double>> probs;
    std::vector<Tensor<double>> logits;
    Tensor<double> student_logits;
    Tensor<double> student_pooled;
    std::vector<int> targets;
    std::vector<TripletIndex> triplets;

    static TotalFixture random(Rng& rng) {
        TotalFixture f;
        const int n = 4, k = 3, d = 5;
        const int nt = 1 + static_cast<int>(rng.below(3));
        for (int j = 0; j < nt; ++j) {
            f.probs.push_back(random_probs(n, k, rng));
            f.logits.push_back(random_values({n, k}, rng, 2.0));
        }
        f.student_logits = random_values({n, k}, rng, 2.0);
        f.student_pooled = random_values({n, d}, rng, 2.0);
        for (int i = 0; i < n; ++i) f.targets.push_back(static_cast<int>(rng.below(k)));
        for (int i = 0; i < n; ++i) f.triplets.push_back(draw_triplet_indices(n, rng));
        return f;
    }

    LossInputs<double> inputs() const {
        LossInputs<double> in;
        in.teacher_probs = probs;
        in.teacher_logits = logits;
        in.student_logits = parameter(student_logits);
        in.student_pooled = parameter(student_pooled);
        in.targets = targets;
        in.triplets = triplets;
        return in;
    }
};

} // namespace

TEST_CASE("total loss sums the enabled components and omits the rest") {
    Rng rng(44);
    for (int it = 0; it < 1000; ++it) {
        const auto f = TotalFixture::random(rng);
        LossConfig cfg;
        cfg.kd = rng.below(2) == 0;
        cfg.sce = rng.below(2) == 0;
        cfg.sim = rng.below(2) == 0;
        cfg.rel = rng.below(2) == 0;
        cfg.tp = rng.below(2) == 0;
        if (!cfg.kd && !cfg.sce && !cfg.sim && !cfg.rel && !cfg.tp) cfg.sce = true;

        const auto [var, bd] = total_loss(f.inputs(), cfg);
        REQUIRE(std::isfinite(bd.total));
        CHECK(scalar(var) == Catch::Approx(bd.total).margin(1e-9));

        double sum = 0;
        for (const auto& part : {bd.kd, bd.sce, bd.sim, bd.rel, bd.tp})
            if (part) sum += *part;
        CHECK(bd.total == Catch::Approx(sum).margin(1e-9));

        CHECK(bd.kd.has_value() == cfg.kd);
        CHECK(bd.sce.has_value() == cfg.sce);
        CHECK(bd.sim.has_value() == cfg.sim);
        CHECK(bd.rel.has_value() == cfg.rel);
        CHECK(bd.tp.has_value() == cfg.tp);
    }
}

TEST_CASE("total loss edge cases") {
    Rng rng(45);
    const auto f = TotalFixture::random(rng);

    SECTION("sce alone is the whole total") {
        LossConfig cfg;
        cfg.kd = cfg.sim = cfg.rel = cfg.tp = false;
        const auto [var, bd] = total_loss(f.inputs(), cfg);
        CHECK(bd.total == *bd.sce);
        CHECK_FALSE(bd.kd);
    }
    SECTION("rel is skipped without triplets") {
        auto in = f.inputs();
        in.triplets.clear();
        LossConfig cfg;
        const auto [var, bd] = total_loss(in, cfg);
        CHECK_FALSE(bd.rel.has_value());
        CHECK(bd.kd.has_value());
    }
    SECTION("rel-only without triplets cannot produce a value") {
        auto in = f.inputs();
        in.triplets.clear();
        LossConfig cfg;
        cfg.kd = cfg.sce = cfg.sim = cfg.tp = false;
        cfg.rel = true;
        CHECK_THROWS_AS(total_loss(in, cfg), ConfigError);
    }
}

TEST_CASE("total loss gradient is the sum of per-component gradients") {
    Rng rng(46);
    const auto f = TotalFixture::random(rng);

    auto grads_for = [&f](const LossConfig& cfg) {
        auto in = f.inputs();
        const auto [var, bd] = total_loss(in, cfg);
        backward(var);
        std::pair<Tensor<double>, Tensor<double>> g{in.student_logits->g(), in.student_pooled->g()};
        return g;
    };

    LossConfig all;
    all.tp = true;
    const auto total = grads_for(all);

    Tensor<double> sum_logits = Tensor<double>::zeros({4, 3});
    Tensor<double> sum_pooled = Tensor<double>::zeros({4, 5});
    for (const char* name : {"kd", "sce", "sim", "rel", "tp"}) {
        LossConfig cfg;
        cfg.kd = std::string(name) == "kd";
        cfg.sce = std::string(name) == "sce";
        cfg.sim = std::string(name) == "sim";
        cfg.rel = std::string(name) == "rel";
        cfg.tp = std::string(name) == "tp";
        const auto part = grads_for(cfg);
        for (std::size_t i = 0; i < sum_logits.size(); ++i) sum_logits.data[i] += part.first.data[i];
        for (std::size_t i = 0; i < sum_pooled.size(); ++i) sum_pooled.data[i] += part.second.data[i];
    }
    for (std::size_t i = 0; i < sum_logits.size(); ++i)
        CHECK(total.first.data[i] == Catch::Approx(sum_logits.data[i]).margin(1e-9));
    for (std::size_t i = 0; i < sum_pooled.size(); ++i)
        CHECK(total.second.data[i] == Catch::Approx(sum_pooled.data[i]).margin(1e-9));
}

TEST_CASE("total loss passes a finite-difference check") {
    Rng rng(47);
    const auto f = TotalFixture::random(rng);
    LossConfig cfg;
    cfg.tp = true;

    const auto report = grad_check(
        [&](std::vector<Var<double>>& params) {
            LossInputs<double> in;
            in.teacher_probs = f.probs;
            in.teacher_logits = f.logits;
            in.student_logits = params[0];
            in.student_pooled = params[1];
            in.targets = f.targets;
            in.triplets = f.triplets;
            return total_loss(in, cfg).first;
        },
        {f.student_logits, f.student_pooled});
    INFO("max rel err " << report.max_rel_err);
    CHECK(report.max_rel_err < 1e-4);
    CHECK(report.checked > 0);
}

TEST_CASE("loss properties hold across random draws") {
    Rng rng(48);
    for (int it = 0; it < 1000; ++it) {
        const int n = 3 + static_cast<int>(rng.below(4));
        const int k = 2 + static_cast<int>(rng.below(4));
        const int d = 2 + static_cast<int>(rng.below(6));
        const int nt = 1 + static_cast<int>(rng.below(3));

        LossInputs<double> in;
        for (int j = 0; j < nt; ++j) {
            in.teacher_probs.push_back(random_probs(n, k, rng));
            in.teacher_logits.push_back(random_values({n, k}, rng, 2.0));
        }
        in.student_logits = parameter(random_values({n, k}, rng, 2.0));
        in.student_pooled = parameter(random_values({n, d}, rng, 2.0));
        for (int i = 0; i < n; ++i) in.targets.push_back(static_cast<int>(rng.below(k)));
        std::vector<Tensor<double>> pooled_vals;
        for (int j = 0; j < nt; ++j) pooled_vals.push_back(random_values({n, d}, rng));
        in.triplets = generate_triplets(pooled_vals, n, rng);

        LossConfig cfg;
        cfg.tp = true;
        const auto [var, bd] = total_loss(in, cfg);

        REQUIRE(*bd.kd >= -1e-12);
        REQUIRE(*bd.sim >= -nt - 1e-9);
        REQUIRE(*bd.sim <= nt + 1e-9);
        REQUIRE(*bd.rel >= -1e-12);
        double entropy_floor = 0;
        for (const auto& p : in.teacher_probs) entropy_floor += mean_row_entropy(p);
        REQUIRE(*bd.tp >= entropy_floor - 1e-9);
        REQUIRE(std::isfinite(bd.total));
        const double sum = *bd.kd + *bd.sce + *bd.sim + *bd.rel + *bd.tp;
        REQUIRE(bd.total == Catch::Approx(sum).margin(1e-9));
    }
}
