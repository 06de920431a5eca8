#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>

#include "udpnet/checkpoint.hpp"
#include "udpnet/config.hpp"

using namespace udpnet;

namespace {

std::filesystem::path tmp_path(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / "udpnet_formats";
    std::filesystem::create_directories(dir);
    return dir / name;
}

CheckpointData sample_checkpoint() {
    CheckpointData c;
    c.header = {{"kind", "test"}, {"step", 5}};
    ArrayRecord a;
    a.name = "a";
    a.dims = {2, 3};
    a.data = {0.1, -0.2, 0.3, 1e-9, 12345.678, -7.0};
    ArrayRecord b;
    b.name = "opt.m.a";
    b.dims = {4};
    b.data = {1.0, 2.0, 3.0, 4.0};
    c.arrays = {a, b};
    return c;
}

} // namespace

TEST_CASE("checkpoints survive a save-load-save cycle byte for byte") {
    auto p1 = tmp_path("round1.ckpt");
    auto p2 = tmp_path("round2.ckpt");
    CheckpointData c = sample_checkpoint();
    save_checkpoint(p1.string(), c);

    CheckpointData loaded = load_checkpoint(p1.string());
    REQUIRE(loaded.header == c.header);
    REQUIRE(loaded.arrays.size() == 2);
    REQUIRE(loaded.array("a").dims == std::vector<uint64_t>{2, 3});
    REQUIRE(loaded.array("a").data == c.arrays[0].data);
    REQUIRE(loaded.array("opt.m.a").data == c.arrays[1].data);
    REQUIRE(loaded.has("a"));
    REQUIRE_FALSE(loaded.has("missing"));
    REQUIRE_THROWS_AS(loaded.array("missing"), std::runtime_error);

    save_checkpoint(p2.string(), loaded);
    REQUIRE(read_file(p1.string()) == read_file(p2.string()));
}

TEST_CASE("the reader widens single-precision arrays") {
    std::string buf;
    buf.append("UDPN", 4);
    detail::ckpt_u32(buf, 1u);
    const std::string hdr = "{}";
    detail::ckpt_u32(buf, static_cast<uint32_t>(hdr.size()));
    buf.append(hdr);
    detail::ckpt_u64(buf, 1u);
    detail::ckpt_u32(buf, 1u);
    buf.append("w");
    detail::ckpt_u32(buf, 0u); // float32
    detail::ckpt_u32(buf, 1u);
    detail::ckpt_u64(buf, 3u);
    const float vals[3] = {1.5f, -2.25f, 0.5f};
    const size_t off = buf.size();
    buf.resize(off + sizeof(vals));
    std::memcpy(buf.data() + off, vals, sizeof(vals));

    auto p = tmp_path("narrow.ckpt");
    atomic_write_file(p.string(), buf);
    CheckpointData c = load_checkpoint(p.string());
    REQUIRE(c.array("w").data == std::vector<double>{1.5, -2.25, 0.5});
}

TEST_CASE("corrupt checkpoints fail loudly naming the file") {
    auto good = tmp_path("good.ckpt");
    save_checkpoint(good.string(), sample_checkpoint());
    const std::string bytes = read_file(good.string());

    auto bad_magic = tmp_path("magic.ckpt");
    atomic_write_file(bad_magic.string(), "JUNK" + bytes.substr(4));
    try {
        load_checkpoint(bad_magic.string());
        FAIL("expected a bad-magic failure");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string(e.what()).find("magic.ckpt") != std::string::npos);
    }

    auto truncated = tmp_path("short.ckpt");
    atomic_write_file(truncated.string(), bytes.substr(0, bytes.size() - 5));
    REQUIRE_THROWS_AS(load_checkpoint(truncated.string()), std::runtime_error);

    auto versioned = tmp_path("vers.ckpt");
    std::string v = bytes;
    v[4] = 2; // version field
    atomic_write_file(versioned.string(), v);
    REQUIRE_THROWS_AS(load_checkpoint(versioned.string()), std::runtime_error);

    REQUIRE_THROWS_AS(load_checkpoint(tmp_path("absent.ckpt").string()),
                      std::runtime_error);
}

TEST_CASE("parameter arrays mirror names and shapes") {
    auto w = make_tensor({2, 2}, true);
    w->data = {1.0, 2.0, 3.0, 4.0};
    auto b = make_tensor({2}, true);
    b->data = {5.0, 6.0};
    ParamList params = {{"lin.w", w}, {"lin.b", b}};

    auto arrays = arrays_from_params(params, "net.");
    REQUIRE(arrays[0].name == "net.lin.w");
    REQUIRE(arrays[0].dims == std::vector<uint64_t>{2, 2});
    REQUIRE(arrays[1].name == "net.lin.b");

    CheckpointData c;
    c.arrays = arrays;
    auto w2 = make_tensor({2, 2}, true);
    auto b2 = make_tensor({2}, true);
    ParamList into = {{"lin.w", w2}, {"lin.b", b2}};
    load_params_from(c, into, "net.");
    REQUIRE(w2->data == w->data);
    REQUIRE(b2->data == b->data);

    auto wrong = make_tensor({3}, true);
    ParamList bad = {{"lin.w", wrong}};
    try {
        load_params_from(c, bad, "net.");
        FAIL("expected a size mismatch");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string(e.what()).find("net.lin.w") != std::string::npos);
    }
}

TEST_CASE("header compatibility covers shape-determining sections only") {
    RunConfig cfg;
    json a = cfg.to_json();
    json b = cfg.to_json();
    require_matching_header(a, b);

    b["train"]["steps"] = 99999; // irrelevant to shapes
    require_matching_header(a, b);

    b = cfg.to_json();
    b["model"]["filters"] = 64;
    try {
        require_matching_header(a, b);
        FAIL("expected a model section mismatch");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string(e.what()).find("model") != std::string::npos);
    }

    b = cfg.to_json();
    b.erase("schedule");
    REQUIRE_THROWS_AS(require_matching_header(a, b), std::runtime_error);
}

TEST_CASE("run configuration round-trips through its serialized form") {
    RunConfig c;
    c.seed = 77;
    c.objective = Objective::hybrid;
    c.beta_start = 2e-4;
    c.beta_end = 4e-3;
    c.model.filters = 16;
    c.model.heads = 2;
    c.model.T = 800;
    c.model.tau = 100;
    c.model.per_layer = true;
    c.model.film = true;
    c.mel.n_mels = 12;
    c.train.steps = 321;
    c.train.batch = 3;
    c.train.independent_noise = true;
    c.codebook.likelihood = LikelihoodKind::softmax;
    c.codebook.sigma = 0.5;
    c.codebook.delta_override = 0.01;
    c.validate();

    RunConfig back = RunConfig::from_json(c.to_json());
    REQUIRE(back.to_json() == c.to_json());
    REQUIRE(back.objective == Objective::hybrid);
    REQUIRE(back.model.per_layer);
    REQUIRE(back.model.film);
    REQUIRE(back.model.n_mels == 12);
    REQUIRE(back.codebook.likelihood == LikelihoodKind::softmax);
    REQUIRE(back.codebook.delta_override == 0.01);
}

TEST_CASE("an empty configuration yields the working defaults") {
    RunConfig c = RunConfig::from_json(json::object());
    REQUIRE(c.model.T == 1000);
    REQUIRE(c.model.tau == 125);
    REQUIRE(c.model.layers() == 8);
    REQUIRE(c.objective == Objective::vlb);
    REQUIRE_FALSE(c.baseline);
}

TEST_CASE("validation failures name the offending key") {
    auto expect_key = [](json j, const std::string& key) {
        try {
            RunConfig::from_json(j);
            FAIL("expected validation to fail for " + key);
        } catch (const std::invalid_argument& e) {
            REQUIRE(std::string(e.what()).find(key) != std::string::npos);
        }
    };

    expect_key({{"schedule", {{"tau", 300}}}}, "schedule.tau");
    expect_key({{"schedule", {{"T", 1}, {"tau", 2}}}}, "schedule.T");
    expect_key({{"schedule", {{"start", 0.0}}}}, "schedule.start");
    expect_key({{"objective", "simple"}, {"schedule", {{"tau", 1000}}}}, "objective");
    expect_key({{"objective", "fancy"}}, "objective");
    expect_key({{"model", {{"kind", "gan"}}}}, "model.kind");
    expect_key({{"model", {{"filters", 30}}}}, "model.filters");
    expect_key({{"model", {{"chunk", 5}}}}, "model.chunk");
    expect_key({{"model", {{"weight_sharing", "half"}}}}, "model.weight_sharing");
    expect_key({{"model", {{"conditioning", "clip"}}}}, "model.conditioning");
    expect_key({{"schedule", {{"T", "abc"}}}}, "schedule.T");
    expect_key({{"train", {{"batch", 0}}}}, "train.batch");
    expect_key({{"objective", "hybrid"}, {"train", {{"lambda_h", 0.0}}}},
               "train.lambda_h");
    expect_key({{"codebook", {{"sigma", -1.0}}}}, "codebook.sigma");
    expect_key({{"codebook", {{"likelihood", "argmax"}}}}, "codebook.likelihood");
    expect_key({{"data", {{"n_clips", 1}}}}, "data.n_clips");
    expect_key({{"data", {{"duration_s", 0.001}}}}, "data.duration_s");
    expect_key(
        {{"model", {{"conditioning", "film"}}}, {"data", {{"duration_s", 0.04}}}},
        "mel.window");
}

TEST_CASE("config files with broken JSON fail naming the path") {
    auto p = tmp_path("broken.json");
    atomic_write_file(p.string(), "{ not json");
    try {
        RunConfig::from_file(p.string());
        FAIL("expected a parse failure");
    } catch (const std::invalid_argument& e) {
        REQUIRE(std::string(e.what()).find("broken.json") != std::string::npos);
    }
    REQUIRE_THROWS_AS(RunConfig::from_file(tmp_path("nofile.json").string()),
                      std::runtime_error);
}
