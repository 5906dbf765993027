#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "recformer/model.hpp"
#include "recformer/rng.hpp"

using namespace recformer;
using model::ModelConfig;
using model::ModelState;
using model::Stage;

namespace {

ModelConfig toy_config() {
    ModelConfig c;
    c.d_e = 8;
    c.heads = 2;
    c.layers = 1;
    c.mlp_hidden = 16;
    c.view_dims = {3, 5};
    return c;
}

std::vector<Matrix> random_views(const ModelConfig& c, int n, Rng& rng) {
    std::vector<Matrix> views;
    for (int d : c.view_dims) {
        Matrix x(n, d);
        for (double& v : x.v) v = rng.uniform(-1.0, 1.0);
        views.push_back(std::move(x));
    }
    return views;
}

// Independent dense evaluation of the attention arithmetic for one sample:
// per-head scores QK^T/sqrt(d_h), zerofill by the outer product of the
// availability row, row softmax, aggregation, concat over heads.
Matrix attention_oracle(const ModelState& state_in, const Matrix& x,
                        const std::vector<double>* w_row) {
    ModelState& state = const_cast<ModelState&>(state_in);
    const ModelConfig& c = state.config;
    const int m = x.rows;
    const int dh = c.head_dim();
    Matrix out(m, c.d_e);
    for (int t = 0; t < c.heads; ++t) {
        auto project = [&](const ad::Tensor& w) {
            Matrix p(m, dh, 0.0);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < dh; ++j)
                    for (int k = 0; k < c.d_e; ++k) p.at(i, j) += x.at(i, k) * w.at(k, j);
            return p;
        };
        const auto& blk = state.encoder[0];
        Matrix q = project(blk.wq[static_cast<std::size_t>(t)]);
        Matrix k = project(blk.wk[static_cast<std::size_t>(t)]);
        Matrix v = project(blk.wv[static_cast<std::size_t>(t)]);

        Matrix scores(m, m, 0.0);
        for (int a = 0; a < m; ++a)
            for (int b = 0; b < m; ++b) {
                for (int f = 0; f < dh; ++f) scores.at(a, b) += q.at(a, f) * k.at(b, f);
                scores.at(a, b) /= std::sqrt(static_cast<double>(dh));
                if (w_row &&
                    (*w_row)[static_cast<std::size_t>(a)] * (*w_row)[static_cast<std::size_t>(b)] == 0.0)
                    scores.at(a, b) = -1e9;
            }
        for (int a = 0; a < m; ++a) {
            double mx = scores.at(a, 0);
            for (int b = 1; b < m; ++b) mx = std::max(mx, scores.at(a, b));
            double total = 0.0;
            for (int b = 0; b < m; ++b) {
                scores.at(a, b) = std::exp(scores.at(a, b) - mx);
                total += scores.at(a, b);
            }
            for (int b = 0; b < m; ++b) scores.at(a, b) /= total;
        }
        for (int a = 0; a < m; ++a)
            for (int f = 0; f < dh; ++f) {
                double s = 0.0;
                for (int b = 0; b < m; ++b) s += scores.at(a, b) * v.at(b, f);
                out.at(a, t * dh + f) = s;
            }
    }
    return out;
}

}  // namespace

TEST_CASE("init_params") {
    const ModelConfig c = toy_config();

    SUBCASE("deterministic per seed") {
        ModelState a = model::init_params(c, 4);
        ModelState b = model::init_params(c, 4);
        ModelState other = model::init_params(c, 5);
        auto pa = a.named_parameters(), pb = b.named_parameters(), po = other.named_parameters();
        bool any_diff = false;
        for (std::size_t i = 0; i < pa.size(); ++i) {
            CHECK(pa[i].second->values == pb[i].second->values);
            any_diff = any_diff || pa[i].second->values != po[i].second->values;
        }
        CHECK(any_diff);
    }

    SUBCASE("biases zero, gammas one") {
        ModelState s = model::init_params(c, 9);
        for (auto& [name, p] : s.named_parameters()) {
            if (name.find(".b") != std::string::npos && name.find("beta") == std::string::npos) {
                for (double x : p->values) CHECK(x == 0.0);
            }
            if (name.find("gamma") != std::string::npos)
                for (double x : p->values) CHECK(x == 1.0);
            if (name.find("beta") != std::string::npos)
                for (double x : p->values) CHECK(x == 0.0);
            CHECK(p->requires_grad);
        }
    }

    SUBCASE("weight variance near 2/(fan_in+fan_out) at 512x512") {
        ModelConfig big;
        big.d_e = 512;
        big.heads = 1;
        big.mlp_hidden = 8;
        big.view_dims = {512};
        ModelState s = model::init_params(big, 21);
        const ad::Tensor& w = s.encoder[0].wo;  // 512 x 512
        double mean = 0.0;
        for (double x : w.values) mean += x;
        mean /= static_cast<double>(w.numel());
        double var = 0.0;
        for (double x : w.values) var += (x - mean) * (x - mean);
        var /= static_cast<double>(w.numel());
        const double expect = 2.0 / (512 + 512);
        CHECK(var > 0.8 * expect);
        CHECK(var < 1.2 * expect);
    }

    SUBCASE("d_e not divisible by heads is a config error") {
        ModelConfig bad = toy_config();
        bad.heads = 3;
        CHECK_THROWS_AS(model::init_params(bad, 0), ConfigError);
    }
}

TEST_CASE("parameter count matches an independent hand count") {
    ModelState s = model::init_params(toy_config(), 2);
    // extractors 3*8+8 + 5*8+8 = 80; per block 192+64+8+16+128+16+128+8+16 = 576;
    // two blocks 1152; heads 27+45 = 72; total 1304.
    CHECK(s.parameter_count() == 1304);
    std::int64_t actual = 0;
    for (auto& [name, p] : s.named_parameters()) actual += p->numel();
    CHECK(actual == s.parameter_count());
}

TEST_CASE("extract_low_level") {
    const ModelConfig c = toy_config();
    Rng rng(87);

    SUBCASE("zero weights produce zero features") {
        ModelState s = model::init_params(c, 1);
        for (auto& w : s.extractor_w) std::fill(w.values.begin(), w.values.end(), 0.0);
        ad::Tape tape;
        auto vars = model::ModelVars::bind(tape, s);
        auto low = model::extract_low_level(tape, vars, random_views(c, 3, rng));
        for (auto v : low)
            for (double x : tape.value(v).values) CHECK(x == 0.0);
    }

    SUBCASE("identity weights pass non-negative input through") {
        ModelConfig sq;
        sq.d_e = 4;
        sq.heads = 2;
        sq.mlp_hidden = 8;
        sq.view_dims = {4};
        ModelState s = model::init_params(sq, 1);
        std::fill(s.extractor_w[0].values.begin(), s.extractor_w[0].values.end(), 0.0);
        for (int i = 0; i < 4; ++i) s.extractor_w[0].at(i, i) = 1.0;
        Matrix x(2, 4, {0.5, 0.0, 1.5, 2.0, 3.0, 0.25, 0.0, 1.0});

        ad::Tape tape;
        auto vars = model::ModelVars::bind(tape, s);
        auto low = model::extract_low_level(tape, vars, {x});
        CHECK(tape.value(low[0]).values == x.v);
    }

    SUBCASE("each output slice depends only on its own view") {
        ModelState s = model::init_params(c, 3);
        std::vector<Matrix> views = random_views(c, 4, rng);

        ad::Tape t1;
        auto vars1 = model::ModelVars::bind(t1, s);
        auto low1 = model::extract_low_level(t1, vars1, views);

        std::vector<Matrix> perturbed = views;
        for (double& x : perturbed[1].v) x += rng.uniform(0.5, 1.5);
        ad::Tape t2;
        auto vars2 = model::ModelVars::bind(t2, s);
        auto low2 = model::extract_low_level(t2, vars2, perturbed);

        CHECK(t1.value(low1[0]).values == t2.value(low2[0]).values);
        CHECK(t1.value(low1[1]).values != t2.value(low2[1]).values);
    }
}

TEST_CASE("cross_view_attention") {
    Rng rng(91);

    SUBCASE("single view attends to itself: A equals V") {
        ModelConfig c;
        c.d_e = 6;
        c.heads = 2;
        c.mlp_hidden = 4;
        c.view_dims = {3};
        ModelState s = model::init_params(c, 7);

        ad::Tensor x({1, 6});
        for (double& v : x.values) v = rng.uniform(-1.0, 1.0);

        ad::Tape tape;
        auto vars = model::ModelVars::bind(tape, s);
        ad::Var xa = tape.constant(x);
        ad::Var a = model::cross_view_attention(tape, vars.encoder[0], xa, nullptr, c);

        for (int t = 0; t < 2; ++t) {
            ad::Var v = tape.matmul(xa, vars.encoder[0].wv[static_cast<std::size_t>(t)]);
            const auto& av = tape.value(a);
            const auto& vv = tape.value(v);
            for (int j = 0; j < 3; ++j)
                CHECK(av.at(0, t * 3 + j) == doctest::Approx(vv.at(0, j)).epsilon(1e-12));
        }
    }

    SUBCASE("sole available view reproduces its own value row") {
        const ModelConfig c = toy_config();
        ModelState s = model::init_params(c, 11);
        ad::Tensor x({2, 8});
        for (double& v : x.values) v = rng.uniform(-1.0, 1.0);
        const std::vector<double> w_row = {1.0, 0.0};

        ad::Tape tape;
        auto vars = model::ModelVars::bind(tape, s);
        ad::Var xa = tape.constant(x);
        ad::Var a = model::cross_view_attention(tape, vars.encoder[0], xa, &w_row, c);
        for (int t = 0; t < c.heads; ++t) {
            ad::Var v = tape.matmul(xa, vars.encoder[0].wv[static_cast<std::size_t>(t)]);
            for (int j = 0; j < c.head_dim(); ++j)
                CHECK(tape.value(a).at(0, t * c.head_dim() + j) ==
                      doctest::Approx(tape.value(v).at(0, j)).epsilon(1e-12));
        }
    }

    SUBCASE("masked three-view case matches the direct evaluation") {
        ModelConfig c;
        c.d_e = 8;
        c.heads = 2;
        c.mlp_hidden = 8;
        c.view_dims = {2, 3, 4};
        ModelState s = model::init_params(c, 13);

        Matrix x(3, 8);
        for (double& v : x.v) v = rng.uniform(-0.5, 0.5);
        const std::vector<double> w_row = {1.0, 0.0, 1.0};

        ad::Tape tape;
        auto vars = model::ModelVars::bind(tape, s);
        ad::Var a = model::cross_view_attention(
            tape, vars.encoder[0], tape.constant(ad::Tensor::from_matrix(x)), &w_row, c);

        Matrix expect = attention_oracle(s, x, &w_row);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 8; ++j)
                CHECK(tape.value(a).at(i, j) == doctest::Approx(expect.at(i, j)).epsilon(1e-12));
    }

    SUBCASE("all-zero availability row rejected") {
        const ModelConfig c = toy_config();
        ModelState s = model::init_params(c, 17);
        ad::Tape tape;
        auto vars = model::ModelVars::bind(tape, s);
        ad::Var x = tape.constant(ad::Tensor({2, 8}, 0.5));
        const std::vector<double> w_row = {0.0, 0.0};
        CHECK_THROWS_AS(model::cross_view_attention(tape, vars.encoder[0], x, &w_row, c),
                        MaskError);
    }
}

TEST_CASE("encode") {
    const ModelConfig c = toy_config();
    Rng rng(97);
    ModelState s = model::init_params(c, 19);
    std::vector<Matrix> views = random_views(c, 5, rng);
    model::MaskRows mask_rows(5, {1.0, 1.0});
    mask_rows[1] = {1.0, 0.0};
    mask_rows[3] = {0.0, 1.0};

    SUBCASE("deterministic") {
        ad::Tape t1, t2;
        auto v1 = model::ModelVars::bind(t1, s);
        auto v2 = model::ModelVars::bind(t2, s);
        auto z1 = model::encode(t1, v1, views, &mask_rows, c, Stage::one);
        auto z2 = model::encode(t2, v2, views, &mask_rows, c, Stage::one);
        for (std::size_t i = 0; i < z1.size(); ++i)
            CHECK(t1.value(z1[i]).values == t2.value(z2[i]).values);
    }

    SUBCASE("Stage-1 isolation: masked-view features cannot reach available slices") {
        std::vector<Matrix> perturbed = views;
        // sample 1 misses view 2, sample 3 misses view 1; hit those rows hard
        for (int j = 0; j < 5; ++j) perturbed[1].at(1, j) += 10.0 * rng.uniform(0.5, 1.0);
        for (int j = 0; j < 3; ++j) perturbed[0].at(3, j) += 10.0 * rng.uniform(0.5, 1.0);

        ad::Tape t1, t2;
        auto v1 = model::ModelVars::bind(t1, s);
        auto v2 = model::ModelVars::bind(t2, s);
        auto z1 = model::encode(t1, v1, views, &mask_rows, c, Stage::one);
        auto z2 = model::encode(t2, v2, perturbed, &mask_rows, c, Stage::one);

        // available slices: every view of samples 0, 2, 4; view 1 of sample 1; view 2 of sample 3
        auto max_abs_diff = [&](int i, int v) {
            double worst = 0.0;
            for (int j = 0; j < c.d_e; ++j)
                worst = std::max(worst, std::abs(t1.value(z1[static_cast<std::size_t>(i)]).at(v, j) -
                                                 t2.value(z2[static_cast<std::size_t>(i)]).at(v, j)));
            return worst;
        };
        for (int i : {0, 2, 4})
            for (int v : {0, 1}) CHECK(max_abs_diff(i, v) < 1e-12);
        CHECK(max_abs_diff(1, 0) < 1e-12);
        CHECK(max_abs_diff(3, 1) < 1e-12);
    }

    SUBCASE("batch of one equals the corresponding full-batch row") {
        ad::Tape t1;
        auto v1 = model::ModelVars::bind(t1, s);
        auto z_full = model::encode(t1, v1, views, &mask_rows, c, Stage::one);

        const int pick = 3;
        std::vector<Matrix> single = model::slice_batch_views(views, {pick});
        model::MaskRows single_mask = {mask_rows[static_cast<std::size_t>(pick)]};
        ad::Tape t2;
        auto v2 = model::ModelVars::bind(t2, s);
        auto z_one = model::encode(t2, v2, single, &single_mask, c, Stage::one);

        CHECK(t1.value(z_full[pick]).values == t2.value(z_one[0]).values);
    }
}

TEST_CASE("batched blocks match the per-sample reference bit-exactly") {
    const ModelConfig c = toy_config();
    Rng rng(109);
    ModelState s = model::init_params(c, 41);
    const int b = 4, m = 2;
    model::MaskRows mask_rows = {{1, 1}, {1, 0}, {0, 1}, {1, 1}};

    ad::Tensor x_all({b * m, c.d_e});
    for (double& v : x_all.values) v = rng.uniform(-1.0, 1.0);

    ad::Tape tape;
    auto vars = model::ModelVars::bind(tape, s);
    ad::Var batched =
        model::attention_block_batched(tape, vars.encoder[0], tape.constant(x_all), &mask_rows, c);

    for (int i = 0; i < b; ++i) {
        ad::Tensor xi({m, c.d_e});
        for (int v = 0; v < m; ++v)
            for (int j = 0; j < c.d_e; ++j) xi.at(v, j) = x_all.at(i * m + v, j);
        ad::Var single = model::attention_block(tape, vars.encoder[0], tape.constant(xi),
                                                &mask_rows[static_cast<std::size_t>(i)], c);
        for (int v = 0; v < m; ++v)
            for (int j = 0; j < c.d_e; ++j)
                CHECK(tape.value(batched).at(i * m + v, j) == tape.value(single).at(v, j));
    }
}

TEST_CASE("fuse") {
    ad::Tape tape;

    SUBCASE("both views available averages them") {
        ad::Var z = tape.constant(ad::Tensor({2, 2}, {1, 3, 3, 5}));
        model::MaskRows mask = {{1.0, 1.0}};
        auto fused = model::fuse(tape, {z}, &mask, Stage::one);
        CHECK(tape.value(fused[0]).values == std::vector<double>{2, 4});
    }

    SUBCASE("single available view is passed through exactly") {
        ad::Var z = tape.constant(ad::Tensor({2, 2}, {1.25, -3.5, 99, 99}));
        model::MaskRows mask = {{1.0, 0.0}};
        auto fused = model::fuse(tape, {z}, &mask, Stage::one);
        CHECK(tape.value(fused[0]).values == std::vector<double>{1.25, -3.5});
    }

    SUBCASE("mixed three-view case matches direct evaluation, Stage 2 equals all-ones") {
        Rng rng(101);
        ad::Tensor z({3, 4});
        for (double& x : z.values) x = rng.uniform(-1.0, 1.0);
        model::MaskRows mask = {{1.0, 0.0, 1.0}};

        ad::Var zv = tape.constant(z);
        auto fused = model::fuse(tape, {zv}, &mask, Stage::one);
        for (int j = 0; j < 4; ++j) {
            const double expect = (z.at(0, j) + z.at(2, j)) / 2.0;
            CHECK(tape.value(fused[0]).at(0, j) == doctest::Approx(expect).epsilon(1e-12));
        }

        model::MaskRows ones = {{1.0, 1.0, 1.0}};
        auto stage1 = model::fuse(tape, {zv}, &ones, Stage::one);
        auto stage2 = model::fuse(tape, {zv}, nullptr, Stage::two);
        CHECK(tape.value(stage1[0]).values == tape.value(stage2[0]).values);
    }

    SUBCASE("zero mask row rejected") {
        ad::Var z = tape.constant(ad::Tensor({2, 2}, 1.0));
        model::MaskRows mask = {{0.0, 0.0}};
        CHECK_THROWS_AS(model::fuse(tape, {z}, &mask, Stage::one), MaskError);
    }
}

TEST_CASE("decode") {
    const ModelConfig c = toy_config();
    Rng rng(103);

    SUBCASE("identical fused rows decode identically, shapes match the view dims") {
        ModelState s = model::init_params(c, 23);
        ad::Tape tape;
        auto vars = model::ModelVars::bind(tape, s);
        ad::Tensor rows({2, 8});
        for (int j = 0; j < 8; ++j) {
            const double x = rng.uniform(-1.0, 1.0);
            rows.at(0, j) = x;
            rows.at(1, j) = x;
        }
        auto x_bar = model::decode(tape, vars, tape.constant(rows), c);
        REQUIRE(x_bar.size() == 2);
        CHECK(tape.value(x_bar[0]).rows() == 2);
        CHECK(tape.value(x_bar[0]).cols() == 3);
        CHECK(tape.value(x_bar[1]).cols() == 5);
        for (int v = 0; v < 2; ++v) {
            const ad::Tensor& xb = tape.value(x_bar[static_cast<std::size_t>(v)]);
            for (int j = 0; j < xb.cols(); ++j) CHECK(xb.at(0, j) == xb.at(1, j));
        }
    }

    SUBCASE("zeroed decoder block with residuals reduces to the linear heads") {
        ModelConfig tiny = toy_config();
        tiny.ln_eps = 1e-12;
        ModelState s = model::init_params(tiny, 29);
        auto zero_block = [](model::AttentionBlock& b) {
            for (auto* t : {&b.wo, &b.bo, &b.w1, &b.b1, &b.w2, &b.b2})
                std::fill(t->values.begin(), t->values.end(), 0.0);
            for (auto* group : {&b.wq, &b.wk, &b.wv})
                for (auto& t : *group) std::fill(t.values.begin(), t.values.end(), 0.0);
        };
        zero_block(s.decoder[0]);

        // standardized fused row: zero mean, unit population variance
        ad::Tensor row({1, 8}, {1, -1, 1, -1, 1, -1, 1, -1});
        ad::Tape tape;
        auto vars = model::ModelVars::bind(tape, s);
        auto x_bar = model::decode(tape, vars, tape.constant(row), tiny);

        for (int v = 0; v < 2; ++v) {
            const std::size_t sv = static_cast<std::size_t>(v);
            for (int j = 0; j < tiny.view_dims[sv]; ++j) {
                double expect = s.head_b[sv].values[static_cast<std::size_t>(j)];
                for (int k = 0; k < 8; ++k)
                    expect += row.values[static_cast<std::size_t>(k)] * s.head_w[sv].at(k, j);
                CHECK(tape.value(x_bar[sv]).at(0, j) == doctest::Approx(expect).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("mask isolation holds through the fused representation") {
    const ModelConfig c = toy_config();
    Rng rng(107);
    ModelState s = model::init_params(c, 31);
    std::vector<Matrix> views = random_views(c, 6, rng);
    data::MaskMatrix mask = data::generate_mask(6, 2, 0.5, 3);
    model::MaskRows mask_rows;
    for (int i = 0; i < 6; ++i) mask_rows.push_back(mask.row(i));

    std::vector<Matrix> perturbed = views;
    for (int i = 0; i < 6; ++i)
        for (int v = 0; v < 2; ++v)
            if (!mask.available(i, v))
                for (int j = 0; j < perturbed[static_cast<std::size_t>(v)].cols; ++j)
                    perturbed[static_cast<std::size_t>(v)].at(i, j) += 10.0 * rng.uniform(-1.0, 1.0);

    ad::Tape t1, t2;
    model::BatchForward f1 = model::forward_batch(t1, s, views, &mask_rows, Stage::one);
    model::BatchForward f2 = model::forward_batch(t2, s, perturbed, &mask_rows, Stage::one);

    double worst = 0.0;
    for (std::size_t i = 0; i < 6; ++i)
        for (int j = 0; j < c.d_e; ++j)
            worst = std::max(worst, std::abs(t1.value(f1.z_bar).at(static_cast<int>(i), j) -
                                             t2.value(f2.z_bar).at(static_cast<int>(i), j)));
    CHECK(worst < 1e-12);
}

TEST_CASE("two-block stacks and disabled residuals stay correct and differentiable") {
    Rng rng(113);
    ModelConfig c = toy_config();
    c.layers = 2;
    data::MaskMatrix mask = data::generate_mask(4, 2, 0.25, 19);
    model::MaskRows mask_rows;
    for (int i = 0; i < 4; ++i) mask_rows.push_back(mask.row(i));

    for (bool residual : {true, false}) {
        c.residual = residual;
        ModelState s = model::init_params(c, 43);
        CHECK(s.encoder.size() == 2);
        CHECK(s.decoder.size() == 2);
        // off the ReLU kink (zero-filled rows x zero biases sit exactly on it)
        for (ad::Tensor* p : s.parameters())
            for (double& x : p->values) x += rng.uniform(-0.05, 0.05);

        std::vector<Matrix> views = random_views(c, 4, rng);

        // isolation must survive the deeper stack
        std::vector<Matrix> perturbed = views;
        for (int i = 0; i < 4; ++i)
            for (int v = 0; v < 2; ++v)
                if (!mask.available(i, v))
                    for (int j = 0; j < perturbed[static_cast<std::size_t>(v)].cols; ++j)
                        perturbed[static_cast<std::size_t>(v)].at(i, j) += rng.uniform(1.0, 5.0);
        ad::Tape t1, t2;
        model::BatchForward f1 = model::forward_batch(t1, s, views, &mask_rows, Stage::one);
        model::BatchForward f2 = model::forward_batch(t2, s, perturbed, &mask_rows, Stage::one);
        for (std::size_t i = 0; i < t1.value(f1.z_bar).values.size(); ++i)
            CHECK(std::abs(t1.value(f1.z_bar).values[i] - t2.value(f2.z_bar).values[i]) < 1e-12);

        // gradients of a reconstruction loss stay finite-difference-clean
        std::vector<ad::Tensor*> probe = {&s.extractor_w[0], &s.encoder[1].wq[0],
                                          &s.decoder[0].w1, &s.head_w[1]};
        const double err = ad::grad_check(
            [&](ad::Tape& t) {
                model::BatchForward fwd = model::forward_batch(t, s, views, &mask_rows, Stage::one);
                ad::Var total;
                for (int v = 0; v < 2; ++v) {
                    ad::Var target = t.constant_matrix(views[static_cast<std::size_t>(v)]);
                    ad::Var term = t.sse(fwd.x_bar[static_cast<std::size_t>(v)], target);
                    total = total.valid() ? t.add(total, term) : term;
                }
                return total;
            },
            probe, 1e-5);
        INFO("residual=", residual);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("checkpoint round-trip preserves every parameter bit-exactly") {
    ModelState s = model::init_params(toy_config(), 37);
    const std::string path = "/tmp/recformer_test_checkpoint.json";
    model::save_checkpoint(path, s);
    ModelState back = model::load_checkpoint(path);
    auto pa = s.named_parameters();
    auto pb = back.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(pa[i].second->values == pb[i].second->values);
    }
    std::remove(path.c_str());
}
