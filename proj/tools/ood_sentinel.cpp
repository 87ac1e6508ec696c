// Command-line front end: calibrate, detect, eval, recipe.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ood_sentinel/ood_sentinel.hpp"

namespace fs = std::filesystem;

namespace {

struct RunConfig {
    std::string id;
    std::vector<std::string> ood;
    std::string manifest;
    std::string prompts_normal;
    std::string prompts_anom;
    std::string clip_images;
    std::string latents;
    std::string recipe;
    std::vector<std::string> models;
    std::string encoder;
    double confidence = 0.9;
    double split = 0.5;
    std::uint64_t seed = 0;
    std::string metric = "all";
    std::string format = "csv";
    std::string out;
    std::size_t dim_v = 0;
    std::size_t n_pi = 0;
    std::size_t n_pibar = 0;
};

void configure_logging() {
    auto logger = spdlog::stderr_color_mt("ood_sentinel");
    logger->set_pattern("%l: %v");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::warn);
    if (const char* env = std::getenv("OOD_SENTINEL_LOG")) {
        const std::string level(env);
        if (level == "error") spdlog::set_level(spdlog::level::err);
        else if (level == "warn") spdlog::set_level(spdlog::level::warn);
        else if (level == "info") spdlog::set_level(spdlog::level::info);
        else if (level == "debug") spdlog::set_level(spdlog::level::debug);
        else spdlog::warn("ignoring OOD_SENTINEL_LOG='{}' (expected error|warn|info|debug)", level);
    }
}

ood::Error usage(const std::string& message) { return ood::Error(ood::ErrorKind::Usage, message); }

void write_text(const std::string& text, const std::string& out) {
    if (out.empty()) {
        std::cout << text;
        return;
    }
    ood::write_file_bytes(out, std::span(reinterpret_cast<const unsigned char*>(text.data()),
                                         text.size()));
}

ood::EmbeddingSet load(const std::string& path) {
    auto set = ood::read_embedding_file(path);
    spdlog::info("loaded {} ({} x {})", path, set.count(), set.dim());
    return set;
}

ood::PromptBank load_prompts(const RunConfig& cfg, const ood::Recipe& recipe) {
    ood::PromptBank bank;
    if (ood::uses(recipe, ood::TermKind::Pi)) {
        if (cfg.prompts_normal.empty()) {
            throw usage("recipe '" + ood::render_recipe(recipe) +
                        "' uses pi and needs --prompts-normal");
        }
        bank.normal = load(cfg.prompts_normal);
    }
    if (ood::uses(recipe, ood::TermKind::PiBar)) {
        if (cfg.prompts_anom.empty()) {
            throw usage("recipe '" + ood::render_recipe(recipe) +
                        "' uses pibar and needs --prompts-anom");
        }
        bank.anomalous = load(cfg.prompts_anom);
    }
    return bank;
}

void check_unit_interval(double x, const char* flag) {
    if (!(x > 0.0 && x < 1.0)) {
        throw usage(std::string(flag) + " must lie strictly between 0 and 1");
    }
}

ood::Recipe parse_recipe_arg(const std::string& text) {
    try {
        return ood::parse_recipe(text);
    } catch (const ood::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n  " << text << "\n  "
                  << std::string(e.position(), ' ') << "^\n";
        throw;
    }
}

int cmd_calibrate(const RunConfig& cfg) {
    check_unit_interval(cfg.confidence, "--confidence");
    check_unit_interval(cfg.split, "--split");
    const auto recipe = parse_recipe_arg(cfg.recipe);
    const auto prompts = load_prompts(cfg, recipe);
    const auto id = load(cfg.id);
    std::optional<ood::EmbeddingSet> clip;
    if (!cfg.clip_images.empty()) clip = load(cfg.clip_images);

    const ood::SampleSources src{&id, clip ? &*clip : nullptr, &prompts};
    const auto cal = ood::calibrate_detailed(
        src, recipe, ood::CalibrationOptions{cfg.confidence, cfg.split, cfg.seed, cfg.encoder});
    if (!cal.fit.converged) {
        spdlog::warn("gamma maximum-likelihood fit did not converge; using the moments estimate");
    }
    const auto& m = cal.model;
    ood::write_model(m, cfg.out);
    std::printf("dim=%zu n_v=%zu n_f=%zu k=%.9g theta=%.9g psi=%.9g\n", m.dim, m.provenance.n_v,
                m.provenance.n_f, m.gamma.shape, m.gamma.scale, m.threshold);
    return 0;
}

int cmd_detect(const RunConfig& cfg) {
    if (cfg.latents.empty() && cfg.clip_images.empty()) {
        throw usage("detect needs --latents and/or --clip-images");
    }
    const auto model = ood::read_model(cfg.models.front());
    const auto prompts = load_prompts(cfg, model.recipe);
    std::optional<ood::EmbeddingSet> latents, clip;
    if (!cfg.latents.empty()) latents = load(cfg.latents);
    if (!cfg.clip_images.empty()) clip = load(cfg.clip_images);
    const auto results = ood::batch_detect(
        model, ood::SampleSources{latents ? &*latents : nullptr, clip ? &*clip : nullptr, &prompts});
    std::size_t flagged = 0;
    for (const auto& r : results) flagged += r.verdict == ood::Verdict::Ood;
    spdlog::info("{} of {} samples flagged ood", flagged, results.size());
    write_text(ood::render_detections_csv(results), cfg.out);
    return 0;
}

/// Manifest for `eval --id ... --ood ...`: each ood file's stem names its type.
ood::DatasetManifest quick_manifest(const RunConfig& cfg, const std::string& encoder) {
    ood::DatasetManifest m;
    m.entries.push_back({cfg.id, ood::Role::Id, "", encoder});
    for (const auto& path : cfg.ood) {
        m.entries.push_back({path, ood::Role::Ood, fs::path(path).stem().string(), encoder});
    }
    m.prompt_files = {cfg.prompts_normal, cfg.prompts_anom};
    ood::validate(m);
    return m;
}

int cmd_eval(const RunConfig& cfg) {
    const bool quick = !cfg.id.empty() || !cfg.ood.empty();
    if (cfg.manifest.empty() == !quick) {
        throw usage("eval needs either --manifest or --id with one or more --ood");
    }
    if (quick && (cfg.id.empty() || cfg.ood.empty())) {
        throw usage("eval without a manifest needs both --id and --ood");
    }
    std::vector<ood::Metric> metrics;
    for (auto m : ood::kAllMetrics) {
        if (cfg.metric == "all" || cfg.metric == ood::to_string(m)) metrics.push_back(m);
    }
    const auto format = cfg.format == "markdown" ? ood::ReportFormat::Markdown : ood::ReportFormat::Csv;
    const ood::GridOptions opt{cfg.seed, 0};

    std::vector<ood::NamedModel> models;
    for (const auto& path : cfg.models) {
        models.push_back({fs::path(path).stem().string(), ood::read_model(path)});
    }

    ood::GridResult grid;
    if (!quick) {
        grid = ood::evaluate_grid(ood::read_manifest(cfg.manifest), models, opt);
    } else {
        // One grid per model so each sees the files under its own encoder name.
        for (const auto& named : models) {
            const bool need_v = ood::uses(named.model.recipe, ood::TermKind::V);
            const bool need_q = ood::uses(named.model.recipe, ood::TermKind::Pi) ||
                                ood::uses(named.model.recipe, ood::TermKind::PiBar);
            std::string encoder =
                need_v ? named.model.provenance.encoder : std::string(ood::kClipImageEncoder);
            if (need_v && need_q && encoder != ood::kClipImageEncoder) {
                throw usage(named.label + ": recipe mixes latents and language features; use --manifest");
            }
            auto part = ood::evaluate_grid(quick_manifest(cfg, encoder),
                                           std::span(&named, 1), opt);
            for (auto& [metric, report] : part.reports) {
                auto& dst = grid.reports[metric];
                dst.metric = metric;
                dst.columns = report.columns;
                for (auto& row : report.rows) dst.rows.push_back(std::move(row));
            }
            grid.warnings.insert(grid.warnings.end(), part.warnings.begin(), part.warnings.end());
        }
    }
    for (const auto& w : grid.warnings) spdlog::warn("{}", w);

    const std::string ext = format == ood::ReportFormat::Markdown ? ".md" : ".csv";
    if (!cfg.out.empty()) fs::create_directories(cfg.out);
    for (auto m : metrics) {
        const auto text = ood::render_report(grid.reports[m], format);
        if (cfg.out.empty()) {
            std::cout << "# " << ood::to_string(m) << "\n" << text << "\n";
        } else {
            write_text(text, (fs::path(cfg.out) / (std::string(ood::to_string(m)) + ext)).string());
        }
    }
    return 0;
}

int cmd_recipe(const RunConfig& cfg) {
    const auto recipe = parse_recipe_arg(cfg.recipe);
    std::cout << ood::render_recipe(recipe) << "\n";
    if (cfg.dim_v || cfg.n_pi || cfg.n_pibar) {
        std::cout << ood::recipe_dimension(recipe, {cfg.dim_v, cfg.n_pi, cfg.n_pibar}) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    configure_logging();
    RunConfig cfg;
    CLI::App app{"Out-of-distribution detection with language-enhanced representations"};
    app.require_subcommand(1);

    auto add_prompts = [&](CLI::App* sub) {
        sub->add_option("--prompts-normal", cfg.prompts_normal, "EMB1 text embeddings, normal descriptions");
        sub->add_option("--prompts-anom", cfg.prompts_anom, "EMB1 text embeddings, anomalous descriptions");
    };

    auto* calibrate = app.add_subcommand("calibrate", "Fit a detector model on in-distribution data");
    calibrate->add_option("--id", cfg.id, "EMB1 in-distribution embeddings (latent role)")->required();
    calibrate->add_option("--clip-images", cfg.clip_images, "EMB1 CLIP image embeddings aligned with --id");
    add_prompts(calibrate);
    calibrate->add_option("--recipe", cfg.recipe, "Composition recipe, e.g. (pi,3v)")->required();
    calibrate->add_option("--confidence", cfg.confidence, "Confidence level phi")->capture_default_str();
    calibrate->add_option("--split", cfg.split, "Fraction of rows used for the mean vector")->capture_default_str();
    calibrate->add_option("--seed", cfg.seed, "Shuffle seed")->capture_default_str();
    calibrate->add_option("--encoder", cfg.encoder, "Encoder name recorded in the model");
    calibrate->add_option("--out", cfg.out, "Model file to write")->required();

    auto* detect = app.add_subcommand("detect", "Score embeddings against a model");
    detect->add_option("--model", cfg.models, "Model file")->required()->expected(1);
    detect->add_option("--latents", cfg.latents, "EMB1 latent embeddings");
    detect->add_option("--clip-images", cfg.clip_images, "EMB1 CLIP image embeddings");
    add_prompts(detect);
    detect->add_option("--out", cfg.out, "CSV output (default stdout)");

    auto* eval = app.add_subcommand("eval", "Per-corruption metric tables");
    eval->add_option("--model", cfg.models, "Model file (repeatable)")->required();
    eval->add_option("--manifest", cfg.manifest, "Dataset manifest (JSON)");
    eval->add_option("--id", cfg.id, "EMB1 in-distribution test set (instead of --manifest)");
    eval->add_option("--ood", cfg.ood, "EMB1 ood set; file stem names the type (repeatable)");
    add_prompts(eval);
    eval->add_option("--metric", cfg.metric, "Metric to report")
        ->check(CLI::IsMember({"f1", "accuracy", "fpr", "all"}))
        ->capture_default_str();
    eval->add_option("--format", cfg.format, "Report format")
        ->check(CLI::IsMember({"csv", "markdown"}))
        ->capture_default_str();
    eval->add_option("--seed", cfg.seed, "Mix sampling seed")->capture_default_str();
    eval->add_option("--out", cfg.out, "Output directory (default stdout)");

    auto* recipe = app.add_subcommand("recipe", "Normalize a recipe and report its dimension");
    recipe->add_option("recipe", cfg.recipe, "Recipe text")->required();
    recipe->add_option("--dim-v", cfg.dim_v, "Latent dimension");
    recipe->add_option("--n-pi", cfg.n_pi, "Number of normal prompts");
    recipe->add_option("--n-pibar", cfg.n_pibar, "Number of anomalous prompts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return ood::exit_code(ood::ErrorKind::Usage);
    }

    try {
        if (calibrate->parsed()) return cmd_calibrate(cfg);
        if (detect->parsed()) return cmd_detect(cfg);
        if (eval->parsed()) return cmd_eval(cfg);
        if (recipe->parsed()) return cmd_recipe(cfg);
    } catch (const ood::ParseError& e) {
        return ood::exit_code(e.kind());
    } catch (const ood::Error& e) {
        spdlog::error("{}: {}", ood::to_string(e.kind()), e.what());
        return ood::exit_code(e.kind());
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
