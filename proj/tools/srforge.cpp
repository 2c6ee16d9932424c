// srforge: build paired super-resolution datasets from raster tiles, train
// CNN/GAN x2 models on them, and evaluate with PSNR/SSIM/LPIPS.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "srforge/srforge.hpp"

namespace fs = std::filesystem;
using namespace srforge;

namespace {

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    require(bool(in), "cli", "cannot open config file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail("cli", "malformed JSON in " + path + ": " + e.what());
    }
    return j;
}

void write_text(const std::string& path, const std::string& text) {
    io::detail::write_file(path, text.data(), text.size());
}

struct CommonOpts {
    std::uint64_t seed = 42;
    std::string config_path;
};

data::ForgeConfig forge_config(const CommonOpts& common) {
    data::ForgeConfig cfg;
    if (!common.config_path.empty()) {
        const auto j = load_json_file(common.config_path);
        cfg = data::ForgeConfig::from_json(j.contains("dataset") ? j["dataset"] : j);
    }
    cfg.seed = common.seed;
    return cfg;
}

train::ScheduleSpec schedule_config(const CommonOpts& common) {
    train::ScheduleSpec sched;
    if (!common.config_path.empty()) {
        const auto j = load_json_file(common.config_path);
        if (j.contains("schedule")) sched = train::ScheduleSpec::from_json(j["schedule"]);
    }
    return sched;
}

train::LossWeights loss_config(const CommonOpts& common) {
    train::LossWeights w;
    if (!common.config_path.empty()) {
        const auto j = load_json_file(common.config_path);
        if (j.contains("loss")) {
            const auto& l = j["loss"];
            w.lambda = l.value("lambda", w.lambda);
            w.eta = l.value("eta", w.eta);
            if (l.contains("percep_layer_weights"))
                w.percep_layer_weights = l["percep_layer_weights"].get<std::vector<double>>();
        }
    }
    w.validate();
    return w;
}

int cmd_build_dataset(const std::string& pairing_path, const std::string& out_dir,
                      const CommonOpts& common) {
    auto entries = data::load_pairing_file(pairing_path);
    auto cfg = forge_config(common);
    const auto summary = data::build_dataset(entries, out_dir, cfg);

    std::cout << "dataset written to " << out_dir << " (seed " << common.seed << ")\n";
    std::cout << "tiles processed: " << summary.tiles << "\n";
    std::cout << "pairs extracted: " << summary.pairs_total << ", rejected by quality gate: "
              << summary.pairs_rejected << "\n\n";
    std::cout << std::left << std::setw(12) << "Dataset" << std::setw(20) << "Number of patches"
              << std::setw(16) << "LR patch size" << "HR patch size\n";
    const auto line = [&](const std::string& name, std::size_t n) {
        std::cout << std::left << std::setw(12) << name << std::setw(20) << n << std::setw(16)
                  << (std::to_string(cfg.lr_patch) + " x " + std::to_string(cfg.lr_patch))
                  << (std::to_string(cfg.lr_patch * 2) + " x " + std::to_string(cfg.lr_patch * 2))
                  << "\n";
    };
    line("Train", summary.counts.train);
    line("Validation", summary.counts.val);
    line("Test", summary.counts.test);
    return 0;
}

zoo::ModelSpec model_spec_for(const std::string& model_name, const CommonOpts& common,
                              int hr_size) {
    zoo::ModelSpec spec;
    if (model_name == "srcnn")
        spec.kind = zoo::ModelKind::Srcnn;
    else if (model_name == "srresnet")
        spec.kind = zoo::ModelKind::Srresnet;
    else if (model_name == "esrgan" || model_name == "real-esrgan")
        spec.kind = zoo::ModelKind::EsrganGen;
    else
        fail("cli", "unknown model '" + model_name +
                        "' (expected srcnn|srresnet|esrgan|real-esrgan)");
    spec.seed = common.seed;
    spec.hr_size = hr_size;
    if (!common.config_path.empty()) {
        const auto j = load_json_file(common.config_path);
        if (j.contains("model")) {
            const auto& m = j["model"];
            spec.n_rrdb = m.value("n_rrdb", spec.n_rrdb);
            spec.n_ub = m.value("n_ub", spec.n_ub);
            spec.scale = m.value("scale", spec.scale);
            spec.channels = m.value("channels", spec.channels);
        }
    }
    spec.validate();
    return spec;
}

int cmd_train(const std::string& manifest_dir, const std::string& model_name,
              const std::string& phase, const std::string& out_dir,
              const std::string& pretrain_checkpoint, int epochs, const CommonOpts& common) {
    require(phase == "pretrain" || phase == "gan", "cli",
            "phase must be pretrain or gan, got '" + phase + "'");
    auto train_manifest =
        data::DatasetManifest::load((fs::path(manifest_dir) / "train_manifest.json").string());
    auto val_manifest =
        data::DatasetManifest::load((fs::path(manifest_dir) / "val_manifest.json").string());

    auto sched = schedule_config(common);
    if (epochs > 0) {
        sched.pretrain_max_epochs = epochs;
        sched.gan_total_epochs = epochs;
    }

    // HR patch side from the first manifest entry sizes the discriminator.
    auto probe = io::load_srras(train_manifest.entries.front().hr_path).raster;
    const int hr_size = probe.width;

    fs::create_directories(out_dir);
    const bool preupscale = model_name == "srcnn";
    auto train_set = rt::load_samples(train_manifest, preupscale);
    auto val_set = rt::load_samples(val_manifest, preupscale);

    if (phase == "pretrain") {
        auto spec = model_spec_for(model_name, common, hr_size);
        auto gen = zoo::build_model(spec);
        auto record = train::pretrain(*gen, train_set, val_set, sched, common.seed, out_dir,
                                      model_name + "_pretrain");
        if (record.diverged) fail("cli", "training diverged: " + record.divergence_message);
        std::cout << "pretrain finished: best val PSNR "
                  << iq::format_metric(record.best_val_psnr) << " dB at epoch "
                  << record.best_epoch << "\n";
        std::cout << "checkpoint: " << record.best_checkpoint << "\n";
        return 0;
    }

    require(!pretrain_checkpoint.empty(), "cli",
            "gan phase requires --pretrain-checkpoint <prefix>");
    auto gen = zoo::load_model(pretrain_checkpoint);
    require(gen->is_generator(), "cli", "checkpoint does not hold a generator");

    zoo::ModelSpec dspec;
    dspec.kind = model_name == "real-esrgan" ? zoo::ModelKind::DiscUnet
                                             : zoo::ModelKind::DiscClassic;
    dspec.hr_size = hr_size;
    dspec.seed = common.seed + 1;
    dspec.validate();
    auto disc = zoo::build_model(dspec);

    zoo::ModelSpec bspec;
    bspec.kind = zoo::ModelKind::FeatureBackbone;
    bspec.seed = common.seed + 2;
    auto backbone = zoo::build_model(bspec);
    auto* fb = dynamic_cast<zoo::FeatureBackboneModel*>(backbone.get());

    auto record = train::adversarial_train(*gen, *disc, *fb, train_set, val_set,
                                           loss_config(common), sched, common.seed, out_dir,
                                           model_name + "_gan");
    if (record.diverged) fail("cli", "training diverged: " + record.divergence_message);
    std::cout << "adversarial training finished after " << record.epochs.size()
              << " epochs; final checkpoint: " << record.final_checkpoint << "\n";
    return 0;
}

int cmd_evaluate(const std::string& manifest_path,
                 const std::vector<std::string>& checkpoint_args, const std::string& out_prefix,
                 const CommonOpts& common) {
    auto manifest = data::DatasetManifest::load(manifest_path);
    auto items = rt::load_eval_items(manifest);

    std::vector<std::unique_ptr<zoo::Model>> owned;
    std::vector<std::pair<std::string, zoo::Model*>> models;
    for (const auto& arg : checkpoint_args) {
        const auto eq = arg.find('=');
        require(eq != std::string::npos, "cli",
                "checkpoint must be name=path_prefix, got '" + arg + "'");
        owned.push_back(zoo::load_model(arg.substr(eq + 1)));
        models.emplace_back(arg.substr(0, eq), owned.back().get());
    }

    iq::CompactFeatureExtractor extractor(3, common.seed);
    const auto reports = rt::evaluate_methods(items, models, extractor);

    const std::string table = rt::format_comparison_table(reports);
    std::cout << table;

    if (!out_prefix.empty()) {
        nlohmann::json all;
        all["seed"] = common.seed;
        for (const auto& r : reports) {
            write_text(out_prefix + "_" + r.method + ".csv", iq::report_to_csv(r.report));
            all["methods"][r.method] = iq::report_to_json(r.report);
        }
        write_text(out_prefix + ".json", all.dump(2) + "\n");
        write_text(out_prefix + "_table.txt", table);
        std::cout << "reports written to " << out_prefix << "*\n";
    }
    return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& input_path,
              const std::string& output_path, int tile, int overlap) {
    auto gen = zoo::load_model(checkpoint);
    require(gen->is_generator(), "cli", "checkpoint does not hold a generator");
    auto input = data::ingest(input_path);
    require(input.raster.bands == 3, "cli", "inference input must have 3 bands");
    auto sr = rt::upscale_raster(*gen, input.raster, tile, overlap);
    if (fs::path(output_path).extension() == ".png")
        io::save_png(output_path, sr);
    else
        io::save_srras(output_path, sr);
    std::cout << "wrote " << output_path << " (" << sr.width << "x" << sr.height << ")\n";
    return 0;
}

int cmd_compare_figure(const std::string& manifest_path,
                       const std::vector<std::string>& checkpoint_args, int n_patches,
                       const std::string& out_png, const CommonOpts& common) {
    auto manifest = data::DatasetManifest::load(manifest_path);
    auto items = rt::load_eval_items(manifest);
    require(n_patches >= 1 && n_patches <= int(items.size()), "cli",
            "n_patches must be within the test set size");

    std::vector<std::unique_ptr<zoo::Model>> owned;
    std::vector<std::pair<std::string, zoo::Model*>> models;
    for (const auto& arg : checkpoint_args) {
        const auto eq = arg.find('=');
        require(eq != std::string::npos, "cli",
                "checkpoint must be name=path_prefix, got '" + arg + "'");
        owned.push_back(zoo::load_model(arg.substr(eq + 1)));
        models.emplace_back(arg.substr(0, eq), owned.back().get());
    }

    // Deterministic patch selection by seed.
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(common.seed);
    rng.shuffle(order);
    order.resize(std::size_t(n_patches));

    std::vector<rt::EvalItem> selected;
    for (const auto idx : order) selected.push_back(items[idx]);

    iq::CompactFeatureExtractor extractor(3, common.seed);
    const auto reports = rt::evaluate_methods(selected, models, extractor, true);

    const auto caption = [](const iq::MetricItem& m) {
        std::ostringstream s;
        if (std::isinf(m.psnr_db))
            s << "inf";
        else
            s << std::fixed << std::setprecision(1) << m.psnr_db;
        s << "/" << std::fixed << std::setprecision(2) << m.ssim << "/" << std::setprecision(2)
          << m.lpips;
        return s.str();
    };

    std::vector<std::string> headers{"GT"};
    for (const auto& r : reports) headers.push_back(r.method);

    std::vector<std::vector<fig::MontageCell>> rows;
    for (const auto& item : selected) {
        std::vector<fig::MontageCell> row;
        row.push_back({item.hr, "GT"});
        for (const auto& r : reports) {
            fig::MontageCell cell;
            cell.image = r.outputs.at(item.pair_id);
            for (const auto& mi : r.report.per_item)
                if (mi.item_id == item.pair_id) cell.caption = caption(mi);
            row.push_back(std::move(cell));
        }
        rows.push_back(std::move(row));
    }

    io::save_png(out_png, fig::render_montage(headers, rows));
    std::cout << "wrote " << out_png << " (" << rows.size() << " rows x " << headers.size()
              << " columns)\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    fixup_blas_core(argv);
    apply_thread_cap();

    CLI::App app{"srforge: paired-dataset construction, x2 super-resolution training, and "
                 "image-quality evaluation for heterogeneous raster sources"};
    app.require_subcommand(1);

    CommonOpts common;
    app.add_option("--seed", common.seed, "global RNG seed recorded in every artifact")
        ->capture_default_str();
    app.add_option("--config", common.config_path,
                   "JSON config with dataset/schedule/loss/model blocks");

    // build-dataset
    std::string pairing_path, out_dir;
    auto* build = app.add_subcommand("build-dataset",
                                     "ingest tile pairs, preprocess, patch, filter, split");
    build->add_option("--pairing", pairing_path, "JSON list of tile pairings")->required();
    build->add_option("--out", out_dir, "output dataset directory")->required();

    // train
    std::string manifest_dir, model_name, phase = "pretrain", train_out, pretrain_ckpt;
    int epochs = 0;
    auto* tr = app.add_subcommand("train", "pretrain or adversarially train a model");
    tr->add_option("--manifest-dir", manifest_dir, "directory with *_manifest.json")->required();
    tr->add_option("--model", model_name, "srcnn|srresnet|esrgan|real-esrgan")->required();
    tr->add_option("--phase", phase, "pretrain|gan")->capture_default_str();
    tr->add_option("--out", train_out, "checkpoint/record output directory")->required();
    tr->add_option("--pretrain-checkpoint", pretrain_ckpt,
                   "generator checkpoint prefix (required for --phase gan)");
    tr->add_option("--epochs", epochs, "override epoch budget (desk-scale runs)");

    // evaluate
    std::string eval_manifest, eval_out;
    std::vector<std::string> checkpoints;
    auto* ev = app.add_subcommand("evaluate",
                                  "score checkpoints plus the bicubic baseline on a test split");
    ev->add_option("--manifest", eval_manifest, "test manifest JSON")->required();
    ev->add_option("--checkpoint", checkpoints, "name=path_prefix (repeatable)");
    ev->add_option("--out", eval_out, "output prefix for CSV/JSON/table reports");

    // infer
    std::string infer_ckpt, infer_in, infer_out;
    int tile = 96, overlap = 8;
    auto* inf = app.add_subcommand("infer", "upscale one raster with a trained generator");
    inf->add_option("--checkpoint", infer_ckpt, "generator checkpoint prefix")->required();
    inf->add_option("--input", infer_in, "input raster (.srras or .png)")->required();
    inf->add_option("--output", infer_out, "output raster (.srras or .png)")->required();
    inf->add_option("--tile", tile, "tile side in LR pixels")->capture_default_str();
    inf->add_option("--overlap", overlap, "tile overlap in LR pixels")->capture_default_str();

    // compare-figure
    std::string fig_manifest, fig_out;
    std::vector<std::string> fig_checkpoints;
    int n_patches = 3;
    auto* cf = app.add_subcommand("compare-figure",
                                  "render a GT-vs-methods montage with metric captions");
    cf->add_option("--manifest", fig_manifest, "test manifest JSON")->required();
    cf->add_option("--checkpoint", fig_checkpoints, "name=path_prefix (repeatable)");
    cf->add_option("--n-patches", n_patches, "rows in the montage")->capture_default_str();
    cf->add_option("--out", fig_out, "output PNG path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (build->parsed()) return cmd_build_dataset(pairing_path, out_dir, common);
        if (tr->parsed())
            return cmd_train(manifest_dir, model_name, phase, train_out, pretrain_ckpt, epochs,
                             common);
        if (ev->parsed()) return cmd_evaluate(eval_manifest, checkpoints, eval_out, common);
        if (inf->parsed()) return cmd_infer(infer_ckpt, infer_in, infer_out, tile, overlap);
        if (cf->parsed())
            return cmd_compare_figure(fig_manifest, fig_checkpoints, n_patches, fig_out, common);
    } catch (const Error& e) {
        std::cerr << "error[" << e.stage() << "]: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
