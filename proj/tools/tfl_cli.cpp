// Command-line front end: corpus generation, training, evaluation, prediction and scoring.
// Every verb prints one JSON document on stdout; failures exit nonzero with
// {"error": {"kind": ..., "message": ...}} on stderr.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "tfl/corpus.hpp"
#include "tfl/errors.hpp"
#include "tfl/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw tfl::ConfigError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw tfl::ConfigError(path.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const json& doc) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw tfl::IoError("cannot write " + path.string());
    out << doc.dump(1) << '\n';
}

int fail(const std::string& kind, const std::string& message) {
    std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
    return kind == "argument" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Temporal forgery localization toolkit"};
    app.require_subcommand(1);

    auto* corpus = app.add_subcommand("corpus", "Synthetic corpus tools");
    auto* corpus_build = corpus->add_subcommand("build", "Generate a seeded synthetic corpus");
    corpus->require_subcommand(1);
    std::string corpus_config;
    std::string corpus_out;
    corpus_build->add_option("--config", corpus_config, "Corpus config JSON (defaults if omitted)");
    corpus_build->add_option("--out", corpus_out, "Output directory")->required();

    auto* train = app.add_subcommand("train", "Train a model");
    std::string train_config;
    train->add_option("--config", train_config, "Run config JSON")->required();
    bool quiet = false;
    train->add_flag("--quiet", quiet, "Suppress per-epoch progress on stderr");

    auto* evaluate = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    std::string ckpt_path;
    std::string split_name = "test";
    bool oracle = false;
    std::string eval_out;
    int eval_threads = 0;
    evaluate->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
    evaluate->add_option("--split", split_name, "train, val or test");
    evaluate->add_flag("--oracle", oracle, "Score ground truth as predictions");
    evaluate->add_option("--out", eval_out, "Directory for the report and prediction dump");
    evaluate->add_option("--threads", eval_threads, "Worker threads (default: from the run config)");

    auto* predict = app.add_subcommand("predict", "Localize forgeries in one feature file");
    std::string predict_ckpt;
    std::string features_path;
    predict->add_option("--ckpt", predict_ckpt, "Checkpoint file")->required();
    predict->add_option("--features", features_path, "Feature file (.tfz)")->required();

    auto* score = app.add_subcommand("score", "Score a prediction dump against annotations");
    std::string preds_path;
    std::string annos_path;
    std::string protocol_path;
    score->add_option("--preds", preds_path, "Prediction dump JSON")->required();
    score->add_option("--annos", annos_path, "Annotation JSON")->required();
    score->add_option("--protocol", protocol_path, "Evaluation protocol JSON (defaults if omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("argument", e.what());
    }

    try {
        if (corpus_build->parsed()) {
            const auto cfg = corpus_config.empty() ? tfl::corpus::CorpusConfig{}
                                                   : tfl::corpus::config_from_json(read_json_file(corpus_config));
            const auto built = tfl::corpus::build_corpus(cfg, corpus_out);
            json manifests = json::object();
            for (const auto& m : built.manifests) {
                manifests[tfl::to_string(m.split)] = (fs::path(corpus_out) / ("manifest_" + tfl::to_string(m.split) + ".json")).string();
            }
            std::cout << json{{"out", corpus_out},
                              {"manifests", manifests},
                              {"num_real", built.stats.num_real},
                              {"num_fake", built.stats.num_fake},
                              {"num_segments", built.stats.num_segments},
                              {"num_short_segments", built.stats.num_short_segments}}
                             .dump(1)
                      << std::endl;
        } else if (train->parsed()) {
            const auto cfg = tfl::pipeline::load_run_config(train_config);
            const auto result = tfl::pipeline::train(cfg, quiet ? nullptr : &std::cerr);
            std::cout << json{{"output_dir", result.output_dir.string()},
                              {"best_checkpoint", (result.output_dir / "best.ckpt").string()},
                              {"last_checkpoint", (result.output_dir / "last.ckpt").string()},
                              {"best_epoch", result.best.epoch},
                              {"history", result.last.history}}
                             .dump(1)
                      << std::endl;
        } else if (evaluate->parsed()) {
            const auto split = tfl::split_from_string(split_name);
            const auto ckpt = tfl::pipeline::load_checkpoint(ckpt_path);
            const auto result = tfl::pipeline::evaluate(ckpt, split, oracle, eval_threads);
            const fs::path out_dir = eval_out.empty() ? fs::path(ckpt_path).parent_path() : fs::path(eval_out);
            const std::string tag = split_name + (oracle ? "_oracle" : "");
            const json report = tfl::eval::to_json(result.report);
            write_json_file(out_dir / ("metrics_" + tag + ".json"), report);
            tfl::save_prediction_dump(result.predictions, out_dir / ("predictions_" + tag + ".json"));
            std::cout << report.dump(1) << std::endl;
        } else if (predict->parsed()) {
            const auto ckpt = tfl::pipeline::load_checkpoint(predict_ckpt);
            const auto model = tfl::pipeline::model_from_checkpoint(ckpt);
            const auto cfg = tfl::pipeline::run_config_from_json(ckpt.run_config, ckpt.run_config.value("base_dir", "."), false);
            const auto seq = tfl::load_feature_sequence(features_path);
            const tfl::ItemPredictions item{seq.item_id(), model.predict(ckpt.params, seq, cfg.postprocess)};
            std::cout << tfl::prediction_dump_to_json({item}).dump(1) << std::endl;
        } else if (score->parsed()) {
            const auto protocol = protocol_path.empty() ? tfl::eval::EvalProtocol{}
                                                        : tfl::eval::protocol_from_json(read_json_file(protocol_path));
            const auto report = tfl::pipeline::score_dump(tfl::load_prediction_dump(preds_path),
                                                          tfl::load_annotations(annos_path), protocol);
            std::cout << tfl::eval::to_json(report).dump(1) << std::endl;
        }
    } catch (const tfl::Error& e) {
        return fail(e.kind(), e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return 0;
}
