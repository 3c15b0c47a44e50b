#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <sys/wait.h>

#include "support.hpp"
#include "tfl/corpus.hpp"
#include "tfl/errors.hpp"
#include "tfl/pipeline.hpp"

using namespace tfl;
using namespace tfl::pipeline;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string file_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json small_run(const std::string& out) {
    return {{"data", {{"train", "corpus/manifest_train.json"}, {"val", "corpus/manifest_val.json"}, {"test", "corpus/manifest_test.json"}}},
            {"tfaa", {{"num_heads", 2}, {"ffn_hidden_dim", 16}}},
            {"pyramid", {{"model_dim", 16}, {"num_heads", 2}, {"ffn_hidden_dim", 16}}},
            {"heads", {{"head_dim", 16}, {"tower_depth", 2}}},
            {"optimizer", {{"epochs", 2}, {"batch_size", 4}, {"warmup_epochs", 1}}},
            {"seed", 3},
            {"output_dir", out}};
}

// One shared tiny corpus and training run for the whole file.
struct Fixture {
    fs::path dir;
    TrainResult result;

    Fixture() : dir(testing::scratch_dir("pipeline")) {
        corpus::CorpusConfig cc;
        cc.num_items = 20;
        cc.channels = 8;
        cc.seed = 5;
        cc.shift_magnitude = 1.5;
        corpus::build_corpus(cc, dir / "corpus");
        std::ofstream(dir / "run.json") << small_run("run").dump();
        result = train(load_run_config(dir / "run.json"));
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

int run_cli(const std::string& args, std::string* err = nullptr) {
    const auto err_path = fs::temp_directory_path() / "tfl_test_cli_stderr.txt";
    const std::string cmd = std::string(TFL_CLI_PATH) + " " + args + " > /dev/null 2> " + err_path.string();
    const int status = std::system(cmd.c_str());
    if (err) *err = file_text(err_path);
    return WEXITSTATUS(status);
}

std::set<std::string> param_names(const RunConfig& cfg, int channels) {
    const Model model(model_config(cfg, channels));
    ParamStore store;
    model.init(store, 1);
    const auto names = store.names();
    return {names.begin(), names.end()};
}

std::vector<std::string> difference(const std::set<std::string>& a, const std::set<std::string>& b) {
    std::vector<std::string> out;
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

}  // namespace

TEST_CASE("run config parsing") {
    const auto dir = testing::scratch_dir("pipeline_cfg");
    const auto cfg = run_config_from_json(json::object(), dir, false);
    CHECK(cfg.use_tfaa);
    CHECK(cfg.pyramid_mode == pyramid::PyramidMode::pca_fpn);
    CHECK(cfg.optimizer.epochs == 30);
    CHECK(cfg.loss.lambda_reg == 2.0);
    CHECK(cfg.loss.lambda_rec == 1.0);
    CHECK(cfg.loss.lambda_scls == 0.1);

    const auto abl = run_config_from_json({{"pyramid", {{"mode", "fpn"}}}, {"ablation", {{"use_tfaa", false}, {"pyramid_mode", "hierarchical"}}}},
                                          dir, false);
    CHECK_FALSE(abl.use_tfaa);
    CHECK(abl.pyramid_mode == pyramid::PyramidMode::hierarchical);
    const auto back = run_config_from_json(to_json(abl), dir, false);
    CHECK(to_json(back) == to_json(abl));

    CHECK_THROWS_AS(run_config_from_json({{"ablation", {{"pyramid_mode", "tree"}}}}, dir, false), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"optimizer", {{"epochs", 0}}}}, dir, false), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"optimizer", {{"epochs", "many"}}}}, dir, false), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"data", {{"train", "nowhere.json"}}}}, dir, true), ConfigError);
    CHECK_THROWS_AS(load_run_config(dir / "absent.json"), ConfigError);

    // regression ranges must match the level count
    auto mismatch = run_config_from_json({{"pyramid", {{"num_levels", 3}}}}, dir, false);
    CHECK_THROWS_AS(model_config(mismatch, 8), ConfigError);
}

TEST_CASE("ablation toggles only add or remove their own parameters") {
    const auto dir = testing::scratch_dir("pipeline_abl");
    auto cfg_for = [&](bool tfaa, const char* mode) {
        return run_config_from_json({{"ablation", {{"use_tfaa", tfaa}, {"pyramid_mode", mode}}}}, dir, false);
    };
    const auto full = param_names(cfg_for(true, "pca_fpn"), 8);
    const auto no_tfaa = param_names(cfg_for(false, "pca_fpn"), 8);
    const auto fpn = param_names(cfg_for(false, "fpn"), 8);
    const auto hier = param_names(cfg_for(false, "hierarchical"), 8);

    CHECK(difference(no_tfaa, full).empty());
    for (const auto& k : difference(full, no_tfaa)) CHECK(k.rfind("tfaa.", 0) == 0);
    CHECK_FALSE(difference(full, no_tfaa).empty());

    CHECK(difference(fpn, no_tfaa).empty());
    for (const auto& k : difference(no_tfaa, fpn)) CHECK(k.rfind("pyramid.ca_", 0) == 0);
    CHECK_FALSE(difference(no_tfaa, fpn).empty());

    CHECK(difference(hier, fpn).empty());
    for (const auto& k : difference(fpn, hier)) CHECK(k.rfind("pyramid.fpn.", 0) == 0);
    CHECK_FALSE(difference(fpn, hier).empty());
}

TEST_CASE("training smoke run") {
    const auto& f = fixture();
    const fs::path out = f.dir / "run";
    CHECK(f.result.output_dir == out);
    CHECK(fs::exists(out / "best.ckpt"));
    CHECK(fs::exists(out / "last.ckpt"));

    std::ifstream log(out / "train_log.jsonl");
    std::string line;
    int epochs = 0;
    while (std::getline(log, line)) {
        const auto j = json::parse(line);
        ++epochs;
        CHECK(j.at("epoch") == epochs);
        for (const char* k : {"total", "cls", "reg", "rec", "scls"}) CHECK(std::isfinite(j.at("loss").at(k).get<double>()));
        CHECK(j.contains("val_ap"));
        CHECK(j.contains("lr"));
    }
    CHECK(epochs == 2);
    CHECK(f.result.last.epoch == 2);
    CHECK(f.result.last.history.size() == 2);
}

TEST_CASE("checkpoint round trip") {
    const auto& f = fixture();
    const auto loaded = load_checkpoint(f.dir / "run" / "last.ckpt");
    CHECK(loaded.epoch == f.result.last.epoch);
    CHECK(loaded.input_channels == 8);
    REQUIRE(loaded.params.names() == f.result.last.params.names());
    for (const auto& name : loaded.params.names()) {
        const Mat& a = loaded.params.at(name);
        const Mat& b = f.result.last.params.at(name);
        REQUIRE(a.rows() == b.rows());
        REQUIRE(a.cols() == b.cols());
        CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
    }

    const auto model = model_from_checkpoint(loaded);
    const auto cfg = run_config_from_json(loaded.run_config, loaded.run_config.at("base_dir").get<std::string>(), false);
    const auto samples = load_split(f.dir / "corpus" / "manifest_test.json");
    const auto a = model.predict(loaded.params, samples[0].features, cfg.postprocess);
    const auto b = model_from_checkpoint(f.result.last).predict(f.result.last.params, samples[0].features, cfg.postprocess);
    CHECK(a == b);
    CHECK(a.size() <= cfg.postprocess.max_segments);
    for (const auto& p : a) CHECK_NOTHROW(p.validate());

    SUBCASE("corrupted files") {
        const auto dir = testing::scratch_dir("pipeline_ckpt");
        std::string bytes = file_text(f.dir / "run" / "last.ckpt");
        std::ofstream(dir / "bad_magic.ckpt", std::ios::binary) << "X" + bytes.substr(1);
        CHECK_THROWS_AS(load_checkpoint(dir / "bad_magic.ckpt"), FormatError);
        std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 8);
        CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), FormatError);
        CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), ConfigError);
    }
}

TEST_CASE("evaluation") {
    const auto& f = fixture();
    const auto oracle = evaluate(f.result.last, Split::test, true);
    for (const auto& [thr, v] : oracle.report.ap) CHECK(v == 1.0);
    for (const auto& [an, v] : oracle.report.ar) CHECK(v == 1.0);

    const auto once = evaluate(f.result.last, Split::test, false, 1);
    const auto twice = evaluate(f.result.last, Split::test, false, 2);
    CHECK(eval::to_json(once.report) == eval::to_json(twice.report));
    CHECK(prediction_dump_to_json(once.predictions) == prediction_dump_to_json(twice.predictions));
    for (const auto& [thr, v] : once.report.ap) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // predicting item by item and scoring the dump reproduces the evaluation
    const auto model = model_from_checkpoint(f.result.last);
    const auto cfg = run_config_from_json(f.result.last.run_config, f.result.last.run_config.at("base_dir").get<std::string>(), false);
    const auto samples = load_split(f.dir / "corpus" / "manifest_test.json");
    std::vector<ItemPredictions> dump;
    std::vector<SegmentAnnotation> annos;
    for (const auto& s : samples) {
        dump.push_back({s.features.item_id(), model.predict(f.result.last.params, s.features, cfg.postprocess)});
        annos.push_back(s.annotation);
    }
    CHECK(prediction_dump_to_json(dump) == prediction_dump_to_json(once.predictions));
    CHECK(eval::to_json(score_dump(dump, annos, cfg.postprocess.protocol)) == eval::to_json(once.report));
}

TEST_CASE("command-line interface") {
    const auto& f = fixture();
    std::string err;

    CHECK(run_cli("train", &err) == 2);
    CHECK(json::parse(err).at("error").at("kind") == "argument");

    CHECK(run_cli("eval --ckpt " + (f.dir / "nope.ckpt").string(), &err) == 1);
    const auto e = json::parse(err).at("error");
    CHECK(e.at("kind") == "config");
    CHECK(e.at("message").get<std::string>().find("nope.ckpt") != std::string::npos);

    const auto out = testing::scratch_dir("pipeline_cli");
    CHECK(run_cli("eval --ckpt " + (f.dir / "run" / "last.ckpt").string() + " --split test --out " + out.string()) == 0);
    REQUIRE(fs::exists(out / "metrics_test.json"));
    REQUIRE(fs::exists(out / "predictions_test.json"));
    const auto report = json::parse(file_text(out / "metrics_test.json"));
    const auto expected = eval::to_json(evaluate(f.result.last, Split::test).report);
    CHECK(report == json::parse(expected.dump(1)));

    CHECK(run_cli("score --preds " + (out / "predictions_test.json").string() + " --annos " +
                  (f.dir / "corpus" / "annotations_test.json").string()) == 0);
    CHECK(run_cli("score --preds " + (out / "metrics_test.json").string() + " --annos " +
                      (f.dir / "corpus" / "annotations_test.json").string(),
                  &err) == 1);
    CHECK(json::parse(err).at("error").contains("kind"));
    CHECK(run_cli("predict --ckpt " + (f.dir / "run" / "last.ckpt").string() + " --features " +
                  (f.dir / "corpus" / "features" / "item_00000.tfz").string()) == 0);
}
