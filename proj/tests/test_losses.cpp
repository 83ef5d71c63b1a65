#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ilkd/centroids.hpp"
#include "ilkd/distill.hpp"
#include "ilkd/triplet.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <sstream>

using namespace ilkd;
using testutil::fd_check;
using testutil::randn;
using testutil::rel_err;

TEST_CASE("triplet loss hand examples") {
    // D(a,p)=0, D(a,n)=0.5, margin 0.2 -> satisfied, loss 0
    Tensor<double> z({3, 2}, 0.0);
    z(2, 0) = std::sqrt(0.5);
    CHECK(triplet_loss<double>(z, {{0, 1, 2}}, 0.2) == 0.0);

    // equidistant positive and negative -> exactly the margin
    Tensor<double> z2({3, 2}, 0.0);
    z2(1, 0) = 1.0;
    z2(2, 0) = -1.0;
    CHECK(triplet_loss<double>(z2, {{0, 1, 2}}, 0.2) == doctest::Approx(0.2).epsilon(1e-12));

    // empty list -> 0, zero gradient
    Tensor<double> dz;
    CHECK(triplet_loss(z2, {}, 0.2, &dz) == 0.0);
    for (int64_t i = 0; i < dz.numel(); ++i) CHECK(dz[i] == 0.0);

    CHECK_THROWS(triplet_loss(z2, {}, -0.1));
}

TEST_CASE("mining matches exhaustive search and handles degenerate batches") {
    Rng rng(101);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(4, 16));
        Tensor<double> z = randn({n, 5}, rng);
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.uniform_int(0, 2)));
        auto mine = mine_triplets(z, labels);
        auto ref = oracles::mine_triplets(z, labels);
        REQUIRE(mine.size() == ref.size());
        for (size_t i = 0; i < mine.size(); ++i) {
            CHECK(mine[i].anchor == std::get<0>(ref[i]));
            CHECK(mine[i].positive == std::get<1>(ref[i]));
            CHECK(mine[i].negative == std::get<2>(ref[i]));
        }
        std::vector<Triplet> trips = mine;
        if (!trips.empty()) {
            const double ours = triplet_loss(z, trips, 0.2);
            std::vector<std::tuple<int, int, int>> rt;
            for (auto& t : trips) rt.emplace_back(t.anchor, t.positive, t.negative);
            CHECK(rel_err(ours, oracles::triplet_loss(z, rt, 0.2)) < 1e-12);
        }
    }

    Tensor<double> z = randn({4, 3}, rng);
    CHECK(mine_triplets(z, {1, 1, 1, 1}).empty());
    Tensor<double> z2 = randn({2, 3}, rng);
    CHECK(mine_triplets(z2, {0, 1}).empty());
}

TEST_CASE("triplet gradient matches finite differences away from kinks") {
    Rng rng(577);
    Tensor<double> z = randn({8, 8}, rng);
    std::vector<int> labels{0, 0, 1, 1, 2, 2, 0, 1};
    std::vector<Triplet> trips = mine_triplets(z, labels);
    REQUIRE(!trips.empty());
    // stay away from hinge kinks: every hinge strictly active or inactive
    for (auto& t : trips) {
        double dap = 0, dan = 0;
        for (int c = 0; c < 8; ++c) {
            dap += (z(t.anchor, c) - z(t.positive, c)) * (z(t.anchor, c) - z(t.positive, c));
            dan += (z(t.anchor, c) - z(t.negative, c)) * (z(t.anchor, c) - z(t.negative, c));
        }
        REQUIRE(std::abs(dap - dan + 0.2) > 1e-2);
    }
    Tensor<double> dz;
    triplet_loss(z, trips, 0.2, &dz);
    auto eval = [&] { return triplet_loss(z, trips, 0.2); };
    CHECK(fd_check(eval, z.data(), dz, rng) < 1e-7);
}

TEST_CASE("covariance matrix and penalty") {
    SUBCASE("hand example") {
        Tensor<double> z({2, 2});
        z(0, 0) = 1;
        z(0, 1) = -1;
        z(1, 0) = -1;
        z(1, 1) = 1;
        Tensor<double> c = covariance_matrix(z);
        CHECK(c(0, 0) == doctest::Approx(2.0));
        CHECK(c(0, 1) == doctest::Approx(-2.0));
        CHECK(c(1, 0) == doctest::Approx(-2.0));
        CHECK(c(1, 1) == doctest::Approx(2.0));
        CHECK(covariance_penalty(z) == doctest::Approx(4.0));
        CovLoss<double> cl = covariance_loss(z, z);
        CHECK(cl.total == doctest::Approx(8.0));
    }

    SUBCASE("identical rows give the zero matrix") {
        Tensor<double> z({5, 3}, 0.0);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 3; ++j) z(i, j) = j + 1;
        Tensor<double> c = covariance_matrix(z);
        for (int64_t i = 0; i < c.numel(); ++i) CHECK(std::abs(c[i]) < 1e-12);
    }

    SUBCASE("matches oracle, symmetric, sane diagonal") {
        Rng rng(7);
        for (int trial = 0; trial < 30; ++trial) {
            const int n = static_cast<int>(rng.uniform_int(2, 16));
            const int d = static_cast<int>(rng.uniform_int(2, 12));
            Tensor<double> z = randn({n, d}, rng);
            Tensor<double> c = covariance_matrix(z);
            Tensor<double> ref = oracles::covariance(z);
            for (int64_t i = 0; i < c.numel(); ++i) CHECK(rel_err(c[i], ref[i]) < 1e-10);
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b) CHECK(c(a, b) == doctest::Approx(c(b, a)));
            CHECK(rel_err(covariance_penalty(z), oracles::cov_penalty(z)) < 1e-10);
        }
    }

    SUBCASE("row permutation invariance") {
        Rng rng(11);
        Tensor<double> z = randn({6, 4}, rng);
        Tensor<double> zp({6, 4});
        std::vector<int> perm{3, 0, 5, 1, 4, 2};
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 4; ++j) zp(i, j) = z(perm[i], j);
        CHECK(rel_err(covariance_penalty(z), covariance_penalty(zp)) < 1e-12);
    }

    SUBCASE("gradient matches finite differences") {
        Rng rng(13);
        Tensor<double> z = randn({4, 8}, rng);
        Tensor<double> dz;
        covariance_penalty(z, &dz);
        auto eval = [&] { return covariance_penalty(z); };
        CHECK(fd_check(eval, z.data(), dz, rng) < 1e-7);
    }

    SUBCASE("n < 2 rejected") {
        Tensor<double> z({1, 4}, 0.0);
        CHECK_THROWS(covariance_matrix(z));
    }
}

TEST_CASE("feature attention loss") {
    Rng rng(17);
    auto make_maps = [&](int layers, int n) {
        std::vector<Tensor<double>> maps;
        for (int l = 0; l < layers; ++l) maps.push_back(randn({n, 2, 3, 3}, rng));
        return maps;
    };

    SUBCASE("identical maps give exactly zero") {
        auto t = make_maps(2, 4);
        CHECK(feature_attention_loss(t, t) == 0.0);
    }

    SUBCASE("positive scale invariance") {
        auto t = make_maps(2, 4);
        auto s = t;
        for (auto& m : s)
            for (int64_t i = 0; i < m.numel(); ++i) m[i] *= 3.0;
        CHECK(feature_attention_loss(t, s) < 1e-6);
    }

    SUBCASE("matches the brute-force oracle") {
        for (int trial = 0; trial < 30; ++trial) {
            auto t = make_maps(2, 4);
            auto s = make_maps(2, 4);
            CHECK(rel_err(feature_attention_loss(t, s), oracles::fam_loss(t, s)) < 1e-10);
        }
    }

    SUBCASE("gradient flows into student maps only and matches finite differences") {
        auto t = make_maps(2, 4);
        auto s = make_maps(2, 4);
        std::vector<Tensor<double>> ds;
        feature_attention_loss(t, s, &ds);
        REQUIRE(ds.size() == 2);
        for (int l = 0; l < 2; ++l) {
            auto eval = [&] { return feature_attention_loss(t, s); };
            CHECK(fd_check(eval, s[l].data(), ds[l], rng) < 1e-6);
        }
    }

    SUBCASE("channel attention variant still matches finite differences") {
        auto t = make_maps(1, 3);
        auto s = make_maps(1, 3);
        std::vector<Tensor<double>> ds;
        feature_attention_loss(t, s, &ds, true);
        auto eval = [&] { return feature_attention_loss<double>(t, s, nullptr, true); };
        CHECK(fd_check(eval, s[0].data(), ds[0], rng) < 1e-6);
        CHECK(feature_attention_loss<double>(t, t, nullptr, true) == 0.0);
    }

    SUBCASE("shape mismatch rejected") {
        auto t = make_maps(2, 4);
        auto s = make_maps(2, 4);
        s[1] = randn({4, 2, 3, 2}, rng);
        CHECK_THROWS(feature_attention_loss(t, s));
    }
}

TEST_CASE("embedding distance") {
    Rng rng(19);

    SUBCASE("identical batches give zero with zero gradients") {
        Tensor<double> z = randn({4, 8}, rng);
        Tensor<double> da, db;
        CHECK(embedding_distance(z, z, &da, &db) == 0.0);
        for (int64_t i = 0; i < da.numel(); ++i) {
            CHECK(da[i] == 0.0);
            CHECK(db[i] == 0.0);
        }
    }

    SUBCASE("unit offset on a single row") {
        Tensor<double> a({1, 4}, 0.0);
        Tensor<double> b({1, 4}, 0.0);
        b(0, 2) = 1.0;
        CHECK(embedding_distance(a, b) == doctest::Approx(1.0));
    }

    SUBCASE("matches oracle and finite differences") {
        for (int trial = 0; trial < 30; ++trial) {
            Tensor<double> a = randn({4, 8}, rng);
            Tensor<double> b = randn({4, 8}, rng);
            CHECK(rel_err(embedding_distance(a, b), oracles::embedding_distance(a, b)) < 1e-10);
        }
        Tensor<double> a = randn({4, 8}, rng);
        Tensor<double> b = randn({4, 8}, rng);
        Tensor<double> da, db;
        embedding_distance(a, b, &da, &db);
        auto eval = [&] { return embedding_distance(a, b); };
        CHECK(fd_check(eval, a.data(), da, rng) < 1e-7);
        CHECK(fd_check(eval, b.data(), db, rng) < 1e-7);
    }
}

TEST_CASE("kd loss composition and ablation gradient gating") {
    Rng rng(23);
    auto maps = [&](int n) {
        std::vector<Tensor<double>> m;
        m.push_back(randn({n, 2, 3, 3}, rng));
        m.push_back(randn({n, 4, 2, 2}, rng));
        return m;
    };
    auto t = maps(4);
    auto s = maps(4);
    Tensor<double> zs = randn({4, 8}, rng);
    Tensor<double> zt = randn({4, 8}, rng);

    KdLoss<double> kd = kd_loss(t, s, zs, zt);
    CHECK(kd.total == kd.fam + kd.cov);
    CHECK(kd.cov == kd.cov_student + kd.cov_teacher);
    CHECK(kd.fam >= 0.0);
    CHECK(kd.cov >= 0.0);
    CHECK(rel_err(kd.fam, oracles::fam_loss(t, s)) < 1e-10);
    CHECK(rel_err(kd.cov, oracles::cov_penalty(zs) + oracles::cov_penalty(zt)) < 1e-10);

    // fam_only: cov still reported, cov gradient suppressed
    std::vector<Tensor<double>> dmaps;
    Tensor<double> dz;
    KdLoss<double> fam_only = kd_loss(t, s, zs, zt, &dmaps, &dz, true, false);
    CHECK(fam_only.cov == kd.cov);
    for (int64_t i = 0; i < dz.numel(); ++i) CHECK(dz[i] == 0.0);
    bool any = false;
    for (auto& m : dmaps)
        for (int64_t i = 0; i < m.numel(); ++i) any = any || m[i] != 0.0;
    CHECK(any);

    // cov_only: fam gradient suppressed
    KdLoss<double> cov_only = kd_loss(t, s, zs, zt, &dmaps, &dz, false, true);
    CHECK(cov_only.fam == kd.fam);
    for (auto& m : dmaps)
        for (int64_t i = 0; i < m.numel(); ++i) CHECK(m[i] == 0.0);
    any = false;
    for (int64_t i = 0; i < dz.numel(); ++i) any = any || dz[i] != 0.0;
    CHECK(any);

    // identical activations and decorrelated embeddings -> total 0
    Tensor<double> eye({4, 2});  // orthogonal sign columns: diagonal covariance
    const double signs[4][2] = {{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) eye(i, j) = signs[i][j];
    KdLoss<double> zero = kd_loss(t, t, eye, eye);
    CHECK(zero.fam == 0.0);
    CHECK(zero.cov == doctest::Approx(0.0));
    CHECK(zero.total == doctest::Approx(0.0));
}

TEST_CASE("centroid store") {
    CentroidStore store;
    CHECK(store.empty());
    store.append(3, 1, {1.f, 2.f});
    store.append(0, 1, {0.f, 1.f});
    store.append(7, 2, {5.f, 5.f});
    CHECK(store.size() == 3);
    CHECK(store.dim() == 2);
    CHECK(store.contains(0));
    CHECK(!store.contains(1));
    CHECK(store.at(3).task_index == 1);
    CHECK_THROWS(store.append(3, 2, {9.f, 9.f}));
    CHECK_THROWS(store.append(4, 2, {1.f, 2.f, 3.f}));

    SUBCASE("roundtrip preserves records and checksum") {
        std::stringstream ss;
        store.save(ss);
        CentroidStore back = CentroidStore::load(ss);
        CHECK(back.size() == 3);
        CHECK(back.checksum() == store.checksum());
        CHECK(back.at(7).mu == store.at(7).mu);
    }

    SUBCASE("append keeps earlier records intact") {
        const uint64_t before = store.checksum();
        std::vector<CentroidStore::Record> snap = store.records();
        store.append(9, 3, {2.f, 2.f});
        for (size_t i = 0; i < snap.size(); ++i) {
            CHECK(store.records()[i].class_id == snap[i].class_id);
            CHECK(store.records()[i].mu == snap[i].mu);
        }
        CHECK(store.checksum() != before);
    }
}

TEST_CASE("ncm classification") {
    SUBCASE("single class store predicts it everywhere") {
        CentroidStore store;
        store.append(4, 1, {0.f, 0.f});
        Rng rng(29);
        Tensor<float> z = randn({5, 2}, rng).cast<float>();
        for (int p : ncm_classify(z, store)) CHECK(p == 4);
    }

    SUBCASE("equidistant tie goes to the lowest class id") {
        CentroidStore store;
        store.append(5, 1, {-1.f, 0.f});
        store.append(2, 1, {1.f, 0.f});
        Tensor<float> z({1, 2}, 0.f);
        CHECK(ncm_classify(z, store)[0] == 2);
    }

    SUBCASE("matches exhaustive oracle and ignores insertion order") {
        Rng rng(31);
        Tensor<double> z = randn({20, 6}, rng);
        std::vector<std::pair<int, std::vector<double>>> cents;
        CentroidStore fwd, rev;
        for (int c = 0; c < 4; ++c) {
            std::vector<float> mu(6);
            std::vector<double> mud(6);
            for (int j = 0; j < 6; ++j) {
                mu[static_cast<size_t>(j)] = static_cast<float>(rng.normal());
                mud[static_cast<size_t>(j)] = mu[static_cast<size_t>(j)];
            }
            cents.emplace_back(c, mud);
            fwd.append(c, 1, mu);
        }
        for (int c = 3; c >= 0; --c) rev.append(c, 1, fwd.at(c).mu);
        auto pred = ncm_classify(z, fwd);
        auto pred_rev = ncm_classify(z, rev);
        for (int i = 0; i < 20; ++i) {
            CHECK(pred[static_cast<size_t>(i)] == oracles::ncm_predict(z.data() + i * 6, cents, 6));
            CHECK(pred[static_cast<size_t>(i)] == pred_rev[static_cast<size_t>(i)]);
        }
    }

    SUBCASE("empty store rejected") {
        CentroidStore store;
        Tensor<float> z({1, 2}, 0.f);
        CHECK_THROWS(ncm_classify(z, store));
    }
}

TEST_CASE("class means") {
    Tensor<double> z({3, 2});
    z(0, 0) = 1;
    z(0, 1) = 2;
    z(1, 0) = -1;
    z(1, 1) = -2;
    z(2, 0) = 4;
    z(2, 1) = 6;
    auto means = class_means(z, {0, 0, 1});
    CHECK(means[0][0] == doctest::Approx(0.0));
    CHECK(means[0][1] == doctest::Approx(0.0));
    CHECK(means[1][0] == doctest::Approx(4.0));
    CHECK(means[1][1] == doctest::Approx(6.0));

    // permutation invariance
    Rng rng(37);
    Tensor<double> big = randn({40, 5}, rng);
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) labels.push_back(static_cast<int>(rng.uniform_int(0, 2)));
    auto a = class_means(big, labels);
    std::vector<int> idx(40);
    for (int i = 0; i < 40; ++i) idx[static_cast<size_t>(i)] = i;
    rng.shuffle(idx);
    Tensor<double> shuf({40, 5});
    std::vector<int> lshuf(40);
    for (int i = 0; i < 40; ++i) {
        lshuf[static_cast<size_t>(i)] = labels[static_cast<size_t>(idx[static_cast<size_t>(i)])];
        for (int j = 0; j < 5; ++j) shuf(i, j) = big(idx[static_cast<size_t>(i)], j);
    }
    auto b = class_means(shuf, lshuf);
    for (auto& [cls, mu] : a)
        for (int j = 0; j < 5; ++j) CHECK(rel_err(mu[static_cast<size_t>(j)], b[cls][static_cast<size_t>(j)]) < 1e-9);
}

TEST_CASE("separability report") {
    SUBCASE("tight far clusters have a large ratio") {
        Tensor<double> z({4, 2});
        z(0, 0) = 0.0;
        z(0, 1) = 0.0;
        z(1, 0) = 0.01;
        z(1, 1) = 0.0;
        z(2, 0) = 10.0;
        z(2, 1) = 0.0;
        z(3, 0) = 10.01;
        z(3, 1) = 0.0;
        Separability s = separability_report(z, {0, 0, 1, 1});
        CHECK(s.ratio > 100);
    }

    SUBCASE("identical points give the infinity sentinel") {
        Tensor<double> z({4, 2}, 1.0);
        Separability s = separability_report(z, {0, 0, 1, 1});
        CHECK(std::isinf(s.ratio));
    }

    SUBCASE("random labels on random points sit near ratio 1") {
        Rng rng(41);
        Tensor<double> z = randn({1000, 4}, rng);
        std::vector<int> labels;
        for (int i = 0; i < 1000; ++i) labels.push_back(static_cast<int>(rng.uniform_int(0, 3)));
        Separability s = separability_report(z, labels);
        CHECK(s.ratio == doctest::Approx(1.0).epsilon(0.1));
    }

    SUBCASE("degenerate class sizes rejected") {
        Tensor<double> z({3, 2}, 0.0);
        CHECK_THROWS(separability_report(z, {0, 0, 1}));
        CHECK_THROWS(separability_report(z, {0, 0, 0}));
    }
}
