#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "udpnet/model.hpp"
#include "udpnet/rng.hpp"

using namespace udpnet;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.filters = 8;
    cfg.kernel = 16;
    cfg.stride = 8;
    cfg.chunk = 4;
    cfg.heads = 2;
    cfg.ffn_dim = 16;
    cfg.codebook_size = 8;
    cfg.T = 1000;
    cfg.tau = 250;
    cfg.n_mels = 5;
    return cfg;
}

TensorPtr random_matrix(int rows, int cols, uint64_t seed, const char* label) {
    RngStream rng(seed, label);
    auto t = make_tensor({rows, cols});
    for (double& v : t->data) v = rng.gaussian();
    return t;
}

size_t total_numel(const ParamList& params) {
    size_t n = 0;
    for (const auto& [name, p] : params) n += p->numel();
    return n;
}

} // namespace

TEST_CASE("latent frame count follows the strided conv geometry") {
    ModelConfig cfg = tiny_config();
    REQUIRE(cfg.frames_for(1200) == 149);
    REQUIRE(cfg.frames_for(1024) == 127);
    REQUIRE(cfg.frames_for(16) == 1);
    REQUIRE_THROWS_AS(cfg.frames_for(15), std::invalid_argument);
    REQUIRE(cfg.layers() == 4);
}

TEST_CASE("model config validation rejects inconsistent settings") {
    ModelConfig good = tiny_config();
    good.validate();

    ModelConfig bad = good;
    bad.chunk = 5;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = good;
    bad.chunk = 0;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = good;
    bad.tau = 1;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = good;
    bad.tau = 300;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = good;
    bad.filters = 9;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("single-row attention reduces to the value and output projections") {
    // With one row the softmax over scores is identically 1, so the
    // queries and keys drop out of the result entirely.
    AttnParams p = make_attn_params(6, 12, 77, "t");
    auto x = random_matrix(1, 6, 78, "attn.x");

    auto got = multihead_attention(x, p, 2);
    REQUIRE(got->shape == std::vector<int>{1, 6});

    std::vector<double> v(6, 0.0), o(6, 0.0);
    for (int j = 0; j < 6; ++j) {
        v[j] = p.bv->data[j];
        for (int i = 0; i < 6; ++i) v[j] += x->data[i] * p.wv->data[i * 6 + j];
    }
    for (int j = 0; j < 6; ++j) {
        o[j] = p.bo->data[j];
        for (int i = 0; i < 6; ++i) o[j] += v[i] * p.wo->data[i * 6 + j];
    }
    for (int j = 0; j < 6; ++j)
        REQUIRE(got->data[j] == Catch::Approx(o[j]).epsilon(1e-12));
}

TEST_CASE("zero-initialized film head leaves the network output unchanged") {
    ModelConfig plain = tiny_config();
    ModelConfig conditioned = tiny_config();
    conditioned.film = true;

    UdpNet a(plain, 31);
    UdpNet b(conditioned, 31);

    auto x = random_matrix(6, 8, 32, "film.x");
    auto mel = random_matrix(2, 5, 33, "film.mel");

    auto out_a = a.unroll(x, nullptr);
    auto out_b = b.unroll(x, &mel);
    REQUIRE(out_a.estimates.size() == out_b.estimates.size());
    for (size_t n = 0; n < out_a.estimates.size(); ++n) {
        const auto& pa = out_a.estimates[n]->data;
        const auto& pb = out_b.estimates[n]->data;
        REQUIRE(pa.size() == pb.size());
        for (size_t i = 0; i < pa.size(); ++i)
            REQUIRE(pa[i] == Catch::Approx(pb[i]).margin(1e-15));
    }
}

TEST_CASE("film generator responds once its projections are nonzero") {
    FilmParams p = make_film_params(5, 8);
    RngStream rng(9, "film.fill");
    for (auto* t : {&p.wg, &p.wb})
        for (double& v : (*t)->data) v = 0.3 * rng.gaussian();

    auto mel = random_matrix(2, 5, 10, "film.mel2");
    auto sig = film_generator(mel, p, 6);
    REQUIRE(sig.gamma->shape == std::vector<int>{6, 8});
    REQUIRE(sig.beta->shape == std::vector<int>{6, 8});

    bool gamma_moved = false;
    for (double v : sig.gamma->data)
        if (std::abs(v - 1.0) > 1e-9) gamma_moved = true;
    REQUIRE(gamma_moved);
}

TEST_CASE("row resampling matrix interpolates with unit row sums") {
    auto R = resample_rows_matrix(6, 2);
    REQUIRE(R->shape == std::vector<int>{6, 2});
    for (int i = 0; i < 6; ++i) {
        double sum = R->data[i * 2] + R->data[i * 2 + 1];
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
        double w = static_cast<double>(i) / 5.0;
        REQUIRE(R->data[i * 2 + 1] == Catch::Approx(w).margin(1e-12));
    }
    // Endpoints map exactly onto the first and last source rows.
    REQUIRE(R->data[0] == 1.0);
    REQUIRE(R->data[5 * 2 + 1] == 1.0);

    auto single = resample_rows_matrix(4, 1);
    for (int i = 0; i < 4; ++i) REQUIRE(single->data[i] == 1.0);
}

TEST_CASE("unroll produces one estimate per layer, deterministically") {
    ModelConfig cfg = tiny_config();
    UdpNet net(cfg, 5);
    auto x = random_matrix(6, 8, 6, "unroll.x");

    auto out = net.unroll(x, nullptr);
    REQUIRE(out.layers_applied == 4);
    REQUIRE(out.estimates.size() == 4);
    for (const auto& e : out.estimates)
        REQUIRE(e->shape == std::vector<int>{6, 8});
    REQUIRE(out.x0_hat() == out.estimates.back());

    auto again = net.unroll(x, nullptr);
    for (size_t n = 0; n < 4; ++n)
        for (size_t i = 0; i < out.estimates[n]->data.size(); ++i)
            REQUIRE(out.estimates[n]->data[i] == again.estimates[n]->data[i]);
}

TEST_CASE("the sampling unroll matches the final training estimate exactly") {
    ModelConfig cfg = tiny_config();
    UdpNet net(cfg, 5);
    auto x = random_matrix(6, 8, 6, "unroll.x");

    auto full = net.unroll(x, nullptr);
    auto final_only = net.unroll_final(x);
    REQUIRE(final_only->shape == full.x0_hat()->shape);
    for (size_t i = 0; i < final_only->data.size(); ++i)
        REQUIRE(final_only->data[i] == full.x0_hat()->data[i]);
    REQUIRE_FALSE(final_only->requires_grad);
}

TEST_CASE("detaching between layers changes gradients but not values") {
    ModelConfig cfg = tiny_config();
    UdpNet net(cfg, 15);
    auto x = random_matrix(6, 8, 16, "detach.x");

    auto linked = net.unroll(x, nullptr, false);
    auto cut = net.unroll(x, nullptr, true);
    for (size_t n = 0; n < 4; ++n)
        for (size_t i = 0; i < linked.estimates[n]->data.size(); ++i)
            REQUIRE(linked.estimates[n]->data[i] == cut.estimates[n]->data[i]);

    // With the chain cut after the first estimate, a loss on the first
    // layer output still reaches the parameters, but a loss on the last
    // output no longer reaches them through earlier layers' inputs.
    auto loss = sq_norm(cut.estimates[0]);
    backward(loss);
    double g = 0.0;
    for (const auto& [name, p] : net.parameters())
        for (double v : p->grad) g += std::abs(v);
    REQUIRE(g > 0.0);
}

TEST_CASE("weight sharing controls how parameter count scales with depth") {
    ModelConfig shared = tiny_config();
    ModelConfig grown = tiny_config();
    grown.tau = 125; // twice the layers

    UdpNet s1(shared, 3), s2(grown, 3);
    REQUIRE(total_numel(s1.parameters()) == total_numel(s2.parameters()));

    ModelConfig per = tiny_config();
    per.per_layer = true;
    ModelConfig per_deep = per;
    per_deep.tau = 125;

    UdpNet p1(per, 3), p2(per_deep, 3);
    REQUIRE(total_numel(p1.parameters()) == 4 * total_numel(s1.parameters()));
    REQUIRE(total_numel(p2.parameters()) == 2 * total_numel(p1.parameters()));
}

TEST_CASE("parameter names are unique and hierarchical") {
    ModelConfig cfg = tiny_config();
    cfg.per_layer = true;
    cfg.film = true;
    UdpNet net(cfg, 8);

    std::set<std::string> names;
    for (const auto& [name, p] : net.parameters()) names.insert(name);
    REQUIRE(names.size() == net.parameters().size());
    REQUIRE(names.count("block0.attn.wq") == 1);
    REQUIRE(names.count("block3.ln_gain") == 1);
    REQUIRE(names.count("film.wg") == 1);

    Autoencoder ae(cfg, 8);
    std::set<std::string> ae_names;
    for (const auto& [name, p] : ae.parameters()) ae_names.insert(name);
    REQUIRE(ae_names == std::set<std::string>{"encoder.kernel", "encoder.bias",
                                              "decoder.kernel", "decoder.bias"});
}

TEST_CASE("conditioned model refuses to run without features") {
    ModelConfig cfg = tiny_config();
    cfg.film = true;
    UdpNet net(cfg, 4);
    auto x = random_matrix(6, 8, 4, "nofeat.x");
    REQUIRE_THROWS_AS(net.unroll(x, nullptr), std::invalid_argument);
}

TEST_CASE("non-finite activations abort the unroll naming the layer") {
    ModelConfig cfg = tiny_config();
    UdpNet net(cfg, 4);
    auto x = random_matrix(6, 8, 4, "nan.x");
    x->data[3] = std::numeric_limits<double>::quiet_NaN();
    try {
        net.unroll(x, nullptr);
        FAIL("expected unroll to abort");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string(e.what()).find("layer 1") != std::string::npos);
    }
}

TEST_CASE("encoder and decoder shapes are conv-transpose duals") {
    ModelConfig cfg = tiny_config();
    Autoencoder ae(cfg, 21);

    RngStream rng(22, "ae.wave");
    auto wave = make_tensor({1, 1024});
    for (double& v : wave->data) v = 0.1 * rng.gaussian();

    auto latent = ae.encode(wave);
    REQUIRE(latent->shape == std::vector<int>{127, 8});
    auto rec = ae.decode(latent);
    REQUIRE(rec->shape == std::vector<int>{1, 1024});
}

TEST_CASE("rectifier zeroes channels whose pre-activation is negative") {
    ModelConfig cfg = tiny_config();
    Autoencoder ae(cfg, 23);
    std::fill(ae.enc_bias->data.begin(), ae.enc_bias->data.end(), -100.0);

    auto wave = make_tensor({1, 64});
    for (double& v : wave->data) v = 0.5;
    auto latent = ae.encode(wave);
    for (double v : latent->data) REQUIRE(v == 0.0);

    auto zero_latent = make_tensor({127, 8});
    auto rec = ae.decode(zero_latent);
    for (double v : rec->data) REQUIRE(v == 0.0);
}

TEST_CASE("autoencoder gradients agree with finite differences") {
    ModelConfig cfg = tiny_config();
    Autoencoder ae(cfg, 25);
    // Bias the encoder away from the rectifier's corner so the finite
    // difference probe stays in a smooth region.
    std::fill(ae.enc_bias->data.begin(), ae.enc_bias->data.end(), 0.5);

    RngStream rng(26, "ae.gc");
    auto wave = make_tensor({1, 48}, true);
    for (double& v : wave->data) v = 0.05 * rng.gaussian();

    ParamList params = ae.parameters();
    params.emplace_back("wave", wave);

    auto report = grad_check([&] { return sq_norm(ae.decode(ae.encode(wave))); }, params);
    REQUIRE(report.ok(1e-5));
}

TEST_CASE("network gradients agree with finite differences", "[slow]") {
    ModelConfig cfg = tiny_config();
    cfg.film = true;
    UdpNet net(cfg, 27);
    auto x = random_matrix(6, 8, 29, "net.gc.x");
    auto mel = random_matrix(2, 5, 30, "net.gc.mel");

    ParamList params = net.parameters();
    auto report = grad_check(
        [&] {
            auto out = net.unroll(x, &mel);
            TensorPtr loss = sq_norm(out.estimates[0]);
            for (size_t n = 1; n < out.estimates.size(); ++n)
                loss = add(loss, sq_norm(out.estimates[n]));
            return loss;
        },
        params);
    REQUIRE(report.max_rel_err < 1e-4);
}
