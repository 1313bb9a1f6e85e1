// hetcd: targeted heterogeneous change detection pipeline.
//
// Subcommands mirror the pipeline stages so the expensive translator training
// is cached on disk and shared across classifier runs:
//   synth -> train-cae -> translate -> (cae-map | features | train-occ ->
//   predict -> eval | ablate)
// Every run writes a run.json with the resolved configuration and seeds.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "hetcd/cae.hpp"
#include "hetcd/eval.hpp"
#include "hetcd/occ.hpp"
#include "hetcd/raster.hpp"
#include "hetcd/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void write_run_json(const fs::path& out_dir, const std::string& command, ordered_json config) {
    ordered_json run;
    run["command"] = command;
    run["config"] = std::move(config);
    fs::create_directories(out_dir);
    std::ofstream out(out_dir / "run.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write run.json in " + out_dir.string());
    out << run.dump(2) << "\n";
}

template <class Vec>
void write_f32_plane(const fs::path& path, const Vec& values) {
    std::vector<std::uint8_t> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float f = static_cast<float>(values[i]);
        std::memcpy(bytes.data() + 4 * i, &f, 4);
    }
    hetcd::detail::write_file_bytes(path, bytes.data(), bytes.size());
}

hetcd::Mask load_prediction_mask(const fs::path& pred, std::int64_t expected) {
    fs::path file = pred;
    if (fs::is_directory(pred)) {
        std::ifstream in(pred / "prediction.json");
        if (!in) throw std::runtime_error("missing prediction.json in " + pred.string());
        nlohmann::json j;
        in >> j;
        file = pred / j.at("map").get<std::string>();
    }
    auto bytes = hetcd::detail::read_file_bytes(file);
    if (static_cast<std::int64_t>(bytes.size()) != expected)
        throw std::runtime_error("prediction mask size mismatch: " + file.string());
    for (auto b : bytes)
        if (b > 1) throw std::runtime_error("prediction mask values must be 0/1: " + file.string());
    return bytes;
}

hetcd::Method method_from_cli(const std::string& s) {
    if (s == "two-step") return hetcd::Method::two_step_full;
    if (s == "no-orig") return hetcd::Method::two_step_no_orig;
    if (s == "no-diff") return hetcd::Method::two_step_no_diff;
    if (s == "step1") return hetcd::Method::step1_only;
    if (s == "isvm") return hetcd::Method::isvm;
    throw CLI::ValidationError("--methods", "unknown method: " + s);
}

const CLI::Validator ThresholdRange = CLI::Validator(
    [](std::string& s) {
        const double v = std::stod(s);
        return (v >= 0.0 && v < 1.0) ? std::string() : std::string("threshold must be in [0,1)");
    },
    "IN [0,1)");

struct PipelineInputs {
    hetcd::DatasetBundle bundle;
    hetcd::Raster x, y;  // normalized
};

PipelineInputs load_normalized(const fs::path& manifest) {
    PipelineInputs in;
    in.bundle = hetcd::load_bundle(manifest);
    in.x = hetcd::normalize_raster(in.bundle.t1);
    in.y = hetcd::normalize_raster(in.bundle.t2);
    return in;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"targeted change detection for heterogeneous raster pairs"};
    app.require_subcommand(1);
    // TOML config with [subcommand] sections; command-line flags override.
    app.set_config("--config", "", "TOML config file");

    // ---------------------------------------------------------------- synth
    struct SynthOpts {
        hetcd::SynthConfig cfg;
        std::string out;
    };
    auto synth = std::make_shared<SynthOpts>();
    {
        auto* cmd = app.add_subcommand("synth", "generate a synthetic heterogeneous bundle");
        cmd->add_option("--out", synth->out, "output directory")->required();
        cmd->add_option("--seed", synth->cfg.seed, "generator seed");
        cmd->add_option("--height", synth->cfg.height, "raster height");
        cmd->add_option("--width", synth->cfg.width, "raster width");
        cmd->add_option("--classes", synth->cfg.latent_classes, "latent class count");
        cmd->add_option("--target-frac", synth->cfg.target_change_fraction,
                        "target change fraction");
        cmd->add_option("--conf-frac", synth->cfg.confounder_change_fraction,
                        "confounder change fraction");
        cmd->add_option("--noise", synth->cfg.sensor_noise_sd, "sensor noise sd");
        cmd->callback([synth] {
            const auto bundle = hetcd::generate_synthetic_pair(synth->cfg);
            hetcd::write_bundle(bundle, synth->out);
            write_run_json(synth->out, "synth",
                           {{"seed", synth->cfg.seed},
                            {"height", synth->cfg.height},
                            {"width", synth->cfg.width},
                            {"classes", synth->cfg.latent_classes},
                            {"target_frac", synth->cfg.target_change_fraction},
                            {"conf_frac", synth->cfg.confounder_change_fraction},
                            {"noise", synth->cfg.sensor_noise_sd}});
        });
    }

    // ------------------------------------------------------------ train-cae
    struct TrainCaeOpts {
        std::string bundle, out;
        hetcd::CaeConfig cfg;
    };
    auto tcae = std::make_shared<TrainCaeOpts>();
    {
        auto* cmd = app.add_subcommand("train-cae", "train the code-aligned autoencoders");
        cmd->add_option("--bundle", tcae->bundle, "bundle manifest path")->required();
        cmd->add_option("--out", tcae->out, "output model directory")->required();
        cmd->add_option("--seed", tcae->cfg.seed, "training seed");
        cmd->add_option("--epochs", tcae->cfg.epochs, "epochs");
        cmd->add_option("--batches-per-epoch", tcae->cfg.batches_per_epoch, "batches per epoch");
        cmd->add_option("--patches-per-batch", tcae->cfg.patches_per_batch, "patches per batch");
        cmd->add_option("--patch-size", tcae->cfg.patch_size, "square patch size");
        cmd->add_option("--code-channels", tcae->cfg.code_channels, "code channels");
        cmd->add_option("--hidden-channels", tcae->cfg.hidden_channels, "hidden channels");
        cmd->add_option("--lr", tcae->cfg.learning_rate, "Adam learning rate");
        cmd->add_option("--w-rec", tcae->cfg.w_rec, "reconstruction loss weight");
        cmd->add_option("--w-code", tcae->cfg.w_code, "code loss weight");
        cmd->add_option("--w-cyc", tcae->cfg.w_cyc, "cycle loss weight");
        cmd->add_option("--w-tr", tcae->cfg.w_tr, "translation loss weight");
        cmd->callback([tcae] {
            const auto in = load_normalized(tcae->bundle);
            const auto model = hetcd::train_cae(in.x, in.y, tcae->cfg);
            hetcd::save_cae_model(tcae->out, model);
            write_run_json(tcae->out, "train-cae",
                           {{"bundle", tcae->bundle},
                            {"seed", tcae->cfg.seed},
                            {"epochs", tcae->cfg.epochs},
                            {"batches_per_epoch", tcae->cfg.batches_per_epoch},
                            {"patches_per_batch", tcae->cfg.patches_per_batch},
                            {"patch_size", tcae->cfg.patch_size},
                            {"code_channels", tcae->cfg.code_channels},
                            {"hidden_channels", tcae->cfg.hidden_channels},
                            {"learning_rate", tcae->cfg.learning_rate},
                            {"w_rec", tcae->cfg.w_rec},
                            {"w_code", tcae->cfg.w_code},
                            {"w_cyc", tcae->cfg.w_cyc},
                            {"w_tr", tcae->cfg.w_tr},
                            {"batch_updates", model.batch_updates}});
        });
    }

    // ------------------------------------------------------------- translate
    struct TranslateOpts {
        std::string bundle, model, out;
    };
    auto tr = std::make_shared<TranslateOpts>();
    {
        auto* cmd = app.add_subcommand("translate", "translate both images across domains");
        cmd->add_option("--bundle", tr->bundle, "bundle manifest path")->required();
        cmd->add_option("--model", tr->model, "trained cae model directory")->required();
        cmd->add_option("--out", tr->out, "output directory")->required();
        cmd->callback([tr] {
            const auto in = load_normalized(tr->bundle);
            const auto model = hetcd::load_cae_model(tr->model);
            const auto result = hetcd::translate(model, in.x, in.y);
            hetcd::save_translation(tr->out, result);
            write_run_json(tr->out, "translate",
                           {{"bundle", tr->bundle}, {"model", tr->model}});
        });
    }

    // --------------------------------------------------------------- cae-map
    struct CaeMapOpts {
        std::string translation, out;
    };
    auto cmap = std::make_shared<CaeMapOpts>();
    {
        auto* cmd = app.add_subcommand("cae-map", "unsupervised Otsu change map from differences");
        cmd->add_option("--translation", cmap->translation, "translation directory")->required();
        cmd->add_option("--out", cmap->out, "output directory")->required();
        cmd->callback([cmap] {
            const auto t = hetcd::load_translation(cmap->translation);
            const auto map = hetcd::cae_change_map(t);
            fs::create_directories(cmap->out);
            hetcd::detail::write_file_bytes(fs::path(cmap->out) / "map.bin", map.binary.data(),
                                            map.binary.size());
            write_f32_plane(fs::path(cmap->out) / "score.bin", map.score);
            ordered_json j;
            j["height"] = t.d_x.height;
            j["width"] = t.d_x.width;
            j["threshold"] = map.threshold;
            j["map"] = "map.bin";
            j["score"] = "score.bin";
            std::ofstream side(fs::path(cmap->out) / "prediction.json", std::ios::trunc);
            side << j.dump(2) << "\n";
            write_run_json(cmap->out, "cae-map", {{"translation", cmap->translation}});
        });
    }

    // -------------------------------------------------------------- features
    struct FeaturesOpts {
        std::string bundle, translation, out, variant = "full";
    };
    auto feat = std::make_shared<FeaturesOpts>();
    {
        auto* cmd = app.add_subcommand("features", "stack per-pixel feature vectors");
        cmd->add_option("--bundle", feat->bundle, "bundle manifest path")->required();
        cmd->add_option("--translation", feat->translation, "translation directory")->required();
        cmd->add_option("--variant", feat->variant, "feature variant")
            ->check(CLI::IsMember({"full", "no-diff", "no-orig"}));
        cmd->add_option("--out", feat->out, "output directory")->required();
        cmd->callback([feat] {
            const auto in = load_normalized(feat->bundle);
            const auto t = hetcd::load_translation(feat->translation);
            const auto f = hetcd::stack_features(in.x, in.y, t,
                                                 hetcd::variant_from_string(feat->variant));
            fs::create_directories(feat->out);
            write_f32_plane(fs::path(feat->out) / "features.bin", f.x);
            ordered_json j;
            j["height"] = f.height;
            j["width"] = f.width;
            j["dim"] = f.dim;
            j["variant"] = feat->variant;
            j["layout"] = "pixel-major";
            j["dtype"] = "f32le";
            j["order"] = "u,d_x,v,d_y";
            j["file"] = "features.bin";
            std::ofstream side(fs::path(feat->out) / "features.json", std::ios::trunc);
            side << j.dump(2) << "\n";
            write_run_json(feat->out, "features",
                           {{"bundle", feat->bundle},
                            {"translation", feat->translation},
                            {"variant", feat->variant}});
        });
    }

    // -------------------------------------------------------------- train-occ
    struct TrainOccOpts {
        std::string bundle, translation, out, variant = "full", method = "two-step";
        std::int64_t npos = 1000;
        std::uint64_t seed = 0;
        double threshold = 0.5;
        int mlp_max_epochs = 200;
        int jobs = 1;
    };
    auto tocc = std::make_shared<TrainOccOpts>();
    {
        auto* cmd = app.add_subcommand("train-occ", "train the two-step one-class classifier");
        cmd->add_option("--bundle", tocc->bundle, "bundle manifest path")->required();
        cmd->add_option("--translation", tocc->translation, "translation directory")->required();
        cmd->add_option("--out", tocc->out, "output model directory")->required();
        cmd->add_option("--variant", tocc->variant, "feature variant")
            ->check(CLI::IsMember({"full", "no-diff", "no-orig"}));
        cmd->add_option("--method", tocc->method, "classifier method")
            ->check(CLI::IsMember({"two-step", "step1", "isvm"}));
        cmd->add_option("--npos", tocc->npos, "labelled positive count")->required();
        cmd->add_option("--seed", tocc->seed, "sampling/training seed");
        cmd->add_option("--threshold", tocc->threshold, "vote threshold t")->check(ThresholdRange);
        cmd->add_option("--mlp-max-epochs", tocc->mlp_max_epochs, "MLP epoch cap");
        cmd->add_option("--jobs", tocc->jobs, "concurrent ensemble member training");
        cmd->callback([tocc] {
            const auto in = load_normalized(tocc->bundle);
            if (!in.bundle.has_ground_truth())
                throw std::runtime_error("train-occ: bundle has no ground truth to sample from");
            const auto t = hetcd::load_translation(tocc->translation);
            const auto variant = hetcd::variant_from_string(tocc->variant);
            const auto f = hetcd::stack_features(in.x, in.y, t, variant);
            const auto p = hetcd::sample_positive_set(in.bundle.ground_truth, tocc->npos, tocc->seed);
            const auto s1 = hetcd::fit_step1(f, p);

            ordered_json config{{"bundle", tocc->bundle},
                                {"translation", tocc->translation},
                                {"variant", tocc->variant},
                                {"method", tocc->method},
                                {"npos", tocc->npos},
                                {"seed", tocc->seed},
                                {"threshold", tocc->threshold},
                                {"reliable_negatives", s1.reliable_negatives.size()}};
            if (tocc->method == "two-step") {
                hetcd::MlpTrainConfig mlp;
                mlp.max_epochs = tocc->mlp_max_epochs;
                mlp.jobs = tocc->jobs;
                const auto ens = hetcd::fit_step2(f, p, s1.reliable_negatives,
                                                  hetcd::mix_seed(tocc->seed, 2), mlp);
                hetcd::save_occ_model(tocc->out, s1, &ens, nullptr, variant, tocc->threshold,
                                      "two-step");
            } else if (tocc->method == "step1") {
                hetcd::save_occ_model(tocc->out, s1, nullptr, nullptr, variant, tocc->threshold,
                                      "step1");
            } else {
                const auto isvm = hetcd::fit_isvm(f, p, s1.reliable_negatives,
                                                  hetcd::mix_seed(tocc->seed, 3));
                hetcd::save_occ_model(tocc->out, s1, nullptr, &isvm, variant, tocc->threshold,
                                      "isvm");
                config["isvm_lambda"] = isvm.lambda;
                config["isvm_iterations"] = isvm.iterations;
            }
            write_run_json(tocc->out, "train-occ", config);
        });
    }

    // ---------------------------------------------------------------- predict
    struct PredictOpts {
        std::string bundle, translation, model, out;
        double threshold = -1.0;  // <0: use the model's stored threshold
    };
    auto pred = std::make_shared<PredictOpts>();
    {
        auto* cmd = app.add_subcommand("predict", "classify every pixel with a trained model");
        cmd->add_option("--bundle", pred->bundle, "bundle manifest path")->required();
        cmd->add_option("--translation", pred->translation, "translation directory")->required();
        cmd->add_option("--model", pred->model, "trained occ model directory")->required();
        cmd->add_option("--threshold", pred->threshold, "vote threshold override")
            ->check(ThresholdRange);
        cmd->add_option("--out", pred->out, "output directory")->required();
        cmd->callback([pred] {
            const auto in = load_normalized(pred->bundle);
            const auto t = hetcd::load_translation(pred->translation);
            const auto model = hetcd::load_occ_model(pred->model);
            const auto f = hetcd::stack_features(in.x, in.y, t, model.variant);
            const double threshold = pred->threshold >= 0 ? pred->threshold : model.threshold;

            hetcd::Mask binary;
            std::vector<double> votes;
            if (model.method == "two-step") {
                const auto cm = hetcd::predict(model.ensemble, f, threshold);
                binary = cm.binary;
                votes = cm.votes;
            } else if (model.method == "step1") {
                binary = hetcd::gmm_predict(model.gmm, f);
            } else {
                binary = hetcd::isvm_predict(model.isvm, f);
            }
            fs::create_directories(pred->out);
            hetcd::detail::write_file_bytes(fs::path(pred->out) / "map.bin", binary.data(),
                                            binary.size());
            ordered_json j;
            j["height"] = f.height;
            j["width"] = f.width;
            j["method"] = model.method;
            j["variant"] = hetcd::to_string(model.variant);
            j["threshold"] = threshold;
            j["map"] = "map.bin";
            if (!votes.empty()) {
                write_f32_plane(fs::path(pred->out) / "votes.bin", votes);
                j["votes"] = "votes.bin";
            }
            std::ofstream side(fs::path(pred->out) / "prediction.json", std::ios::trunc);
            side << j.dump(2) << "\n";
            write_run_json(pred->out, "predict",
                           {{"bundle", pred->bundle},
                            {"translation", pred->translation},
                            {"model", pred->model},
                            {"threshold", threshold}});
        });
    }

    // ------------------------------------------------------------------- eval
    struct EvalOpts {
        std::string bundle, pred, out;
        std::string method = "two-step", variant = "full";
        std::int64_t npos = 0;
    };
    auto ev = std::make_shared<EvalOpts>();
    {
        auto* cmd = app.add_subcommand("eval", "score a prediction against the ground truth");
        cmd->add_option("--bundle", ev->bundle, "bundle manifest path")->required();
        cmd->add_option("--pred", ev->pred, "prediction directory or mask file")->required();
        cmd->add_option("--out", ev->out, "output directory")->required();
        cmd->add_option("--method", ev->method, "method label for the metrics row");
        cmd->add_option("--variant", ev->variant, "variant label for the metrics row");
        cmd->add_option("--npos", ev->npos, "npos label for the metrics row");
        cmd->callback([ev] {
            const auto bundle = hetcd::load_bundle(ev->bundle);
            if (!bundle.has_ground_truth())
                throw std::runtime_error("eval: bundle has no ground truth");
            const auto mask = load_prediction_mask(ev->pred, bundle.t1.pixels());
            const auto m = hetcd::f1_score(mask, bundle.ground_truth);

            fs::create_directories(ev->out);
            {
                std::ofstream csv(fs::path(ev->out) / "metrics.csv", std::ios::trunc);
                csv << "method,variant,npos,rep,f1,tp,fp,fn,tn\n";
                char line[256];
                std::snprintf(line, sizeof line, "%s,%s,%lld,0,%.6f,%lld,%lld,%lld,%lld\n",
                              ev->method.c_str(), ev->variant.c_str(),
                              static_cast<long long>(ev->npos), m.f1,
                              static_cast<long long>(m.tp), static_cast<long long>(m.fp),
                              static_cast<long long>(m.fn), static_cast<long long>(m.tn));
                csv << line;
            }
            hetcd::write_png(fs::path(ev->out) / "confusion.png",
                             hetcd::confusion_map(mask, bundle.ground_truth, bundle.t1.height,
                                                  bundle.t1.width));

            ordered_json j;
            j["f1"] = m.f1;
            j["tp"] = m.tp;
            j["fp"] = m.fp;
            j["fn"] = m.fn;
            j["tn"] = m.tn;
            j["degenerate"] = m.degenerate;

            if (!bundle.region_masks.empty()) {
                std::vector<hetcd::RegionSpec> specs;
                for (const auto& [name, rmask] : bundle.region_masks)
                    specs.push_back({name, rmask, hetcd::RegionPolarity::expect_positive});
                const auto rates = hetcd::region_rates(mask, specs);
                std::ofstream csv(fs::path(ev->out) / "regions.csv", std::ios::trunc);
                csv << "region,pixels,positive_rate,negative_rate\n";
                char line[256];
                auto regions = ordered_json::object();
                for (const auto& r : rates) {
                    std::snprintf(line, sizeof line, "%s,%lld,%.6f,%.6f\n", r.name.c_str(),
                                  static_cast<long long>(r.pixels), r.positive_rate,
                                  r.negative_rate);
                    csv << line;
                    regions[r.name] = {{"pixels", r.pixels},
                                       {"positive_rate", r.positive_rate},
                                       {"negative_rate", r.negative_rate}};
                }
                j["regions"] = regions;
            }

            if (bundle.t1.channel_named("red") >= 0 && bundle.t1.channel_named("nir") >= 0 &&
                bundle.t2.channel_named("red") >= 0 && bundle.t2.channel_named("nir") >= 0) {
                const auto nd = hetcd::ndvi_delta(bundle.t1, bundle.t2, mask);
                j["ndvi_delta"] = {{"mean", nd.mean_delta},
                                   {"pixels_used", nd.pixels_used},
                                   {"pixels_excluded", nd.pixels_excluded}};
            }
            std::ofstream side(fs::path(ev->out) / "eval.json", std::ios::trunc);
            side << j.dump(2) << "\n";
            write_run_json(ev->out, "eval",
                           {{"bundle", ev->bundle}, {"pred", ev->pred}, {"f1", m.f1}});
        });
    }

    // ----------------------------------------------------------------- ablate
    struct AblateOpts {
        std::string bundle, translation, out;
        std::vector<std::int64_t> grid = {25, 50, 100, 250, 500, 1000, 2000, 3000};
        std::vector<std::string> methods = {"two-step", "no-orig", "no-diff", "step1", "isvm"};
        int reps = 10;
        std::uint64_t seed = 0;
        double threshold = 0.5;
        int jobs = 1;
        int mlp_max_epochs = 200;
    };
    auto ab = std::make_shared<AblateOpts>();
    {
        auto* cmd = app.add_subcommand("ablate", "label-budget ablation over methods and variants");
        cmd->add_option("--bundle", ab->bundle, "bundle manifest path")->required();
        cmd->add_option("--translation", ab->translation, "translation directory")->required();
        cmd->add_option("--out", ab->out, "output directory")->required();
        cmd->add_option("--grid", ab->grid, "npos grid")->delimiter(',');
        cmd->add_option("--methods", ab->methods, "methods to run")
            ->delimiter(',')
            ->check(CLI::IsMember({"two-step", "no-orig", "no-diff", "step1", "isvm"}));
        cmd->add_option("--reps", ab->reps, "repetitions per cell");
        cmd->add_option("--seed", ab->seed, "master seed");
        cmd->add_option("--threshold", ab->threshold, "vote threshold t")->check(ThresholdRange);
        cmd->add_option("--jobs", ab->jobs, "worker threads");
        cmd->add_option("--mlp-max-epochs", ab->mlp_max_epochs, "MLP epoch cap");
        cmd->callback([ab] {
            const auto bundle = hetcd::load_bundle(ab->bundle);
            const auto t = hetcd::load_translation(ab->translation);
            hetcd::AblationConfig cfg;
            cfg.npos_grid = ab->grid;
            cfg.repetitions = ab->reps;
            cfg.master_seed = ab->seed;
            cfg.threshold = ab->threshold;
            cfg.jobs = ab->jobs;
            cfg.mlp.max_epochs = ab->mlp_max_epochs;
            cfg.methods.clear();
            for (const auto& m : ab->methods) cfg.methods.push_back(method_from_cli(m));
            const auto report = hetcd::run_ablation(bundle, t, cfg);
            fs::create_directories(ab->out);
            hetcd::write_metrics_csv(fs::path(ab->out) / "metrics.csv", report);
            hetcd::write_report_csv(fs::path(ab->out) / "report.csv", report);
            hetcd::write_png(fs::path(ab->out) / "curves.png", hetcd::render_ablation_plot(report));
            ordered_json grid_json = ab->grid;
            ordered_json methods_json = ab->methods;
            write_run_json(ab->out, "ablate",
                           {{"bundle", ab->bundle},
                            {"translation", ab->translation},
                            {"grid", grid_json},
                            {"methods", methods_json},
                            {"reps", ab->reps},
                            {"seed", ab->seed},
                            {"threshold", ab->threshold},
                            {"jobs", ab->jobs},
                            {"mlp_max_epochs", ab->mlp_max_epochs}});
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
