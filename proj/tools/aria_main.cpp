#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "aria/config.hpp"
#include "aria/corpus.hpp"
#include "aria/eval.hpp"
#include "aria/model.hpp"
#include "aria/plot.hpp"
#include "aria/train.hpp"
#include "aria/wav.hpp"

namespace {

namespace fs = std::filesystem;
using Scalar = float;

int cmd_gen_corpus(const std::string& config_path, const std::string& out_dir,
                   std::uint64_t seed_override, bool has_seed) {
    aria::RunConfig cfg = aria::load_config(config_path);
    if (has_seed) cfg.gen.seed = seed_override;
    const auto entries = aria::generate_synthetic_corpus(cfg.gen, cfg.gen.seed);
    const std::string manifest = aria::write_corpus(entries, out_dir);
    // parse back as a self-check before declaring success
    const auto parsed = aria::parse_corpus(manifest, cfg.gen.hop_size);
    std::printf("wrote %zu songs to %s\n", parsed.size(), manifest.c_str());
    return 0;
}

std::string checkpoint_name(long step) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "ckpt_%06ld.ckpt", step);
    return buf;
}

int cmd_train(const std::string& config_path, const std::string& resume_path,
              std::uint64_t seed_override, bool has_seed) {
    aria::RunConfig cfg = aria::load_config(config_path);
    if (has_seed) cfg.train.seed = seed_override;
    if (cfg.manifest.empty()) throw aria::ConfigError("config: 'manifest' path is required for train");
    const auto entries = aria::parse_corpus(cfg.manifest, cfg.spectro.hop_size);

    aria::Trainer<Scalar> trainer(cfg, entries);
    const std::uint64_t fp = aria::arch_fingerprint(cfg);
    fs::create_directories(cfg.out_dir);
    const std::string csv_path = (fs::path(cfg.out_dir) / "losses.csv").string();
    const std::string final_path = (fs::path(cfg.out_dir) / "model.ckpt").string();

    const bool resuming = !resume_path.empty();
    if (resuming) aria::load_checkpoint(trainer.state(), fp, resume_path);
    std::ofstream csv(csv_path, resuming ? std::ios::app : std::ios::trunc);
    if (!csv) throw aria::Error("cannot open loss CSV: " + csv_path);
    if (!resuming) csv << aria::LossReport::csv_header() << "\n";

    if (trainer.state().step >= cfg.train.steps) {
        std::printf("checkpoint already at step %ld >= budget %d; nothing to do\n",
                    trainer.state().step, cfg.train.steps);
        return 0;
    }
    std::printf("training from step %ld to %d (%zu segments, %zu songs)\n", trainer.state().step,
                cfg.train.steps, trainer.segment_count(), trainer.train_entries().size());

    while (trainer.state().step < cfg.train.steps) {
        const long step = trainer.state().step;  // report rows carry the pre-increment step
        const aria::LossReport report = trainer.step();
        csv << report.csv_row(step) << "\n";
        const long done = trainer.state().step;
        if (done % 100 == 0 || done == cfg.train.steps)
            std::printf("step %ld: total_g=%.4f recon=%.4f kl=%.4f adv_d=%.4f\n", done,
                        report.total_g, report.recon, report.kl, report.adv_d);
        if (cfg.train.checkpoint_every > 0 && done % cfg.train.checkpoint_every == 0)
            aria::save_checkpoint(trainer.state(), fp,
                                  (fs::path(cfg.out_dir) / checkpoint_name(done)).string());
        csv.flush();
    }
    aria::save_checkpoint(trainer.state(), fp, final_path);
    std::printf("saved %s at step %ld\n", final_path.c_str(), trainer.state().step);
    return 0;
}

aria::MusicScore load_score_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw aria::ParseError("cannot open score file: " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        return aria::parse_score_line(line, line_no);
    }
    throw aria::ParseError("score file has no record: " + path);
}

int cmd_synth(const std::string& config_path, const std::string& checkpoint_path,
              const std::string& score_path, const std::string& out_path, double noise_scale,
              std::uint64_t seed_override, bool has_seed) {
    const aria::RunConfig cfg = aria::load_config(config_path);
    aria::TrainState<Scalar> state(cfg);
    aria::load_checkpoint(state, aria::arch_fingerprint(cfg), checkpoint_path);
    if (state.step < 1) throw aria::ValidationError("checkpoint has no training steps");

    const aria::MusicScore score = load_score_file(score_path);
    aria::Rng rng(has_seed ? seed_override : cfg.train.seed);
    const aria::SynthesisResult result = aria::synthesize(state.model, score, noise_scale, rng);
    aria::write_wav(out_path, result.audio);

    nlohmann::json sidecar{{"pred_dur", result.pred_dur},
                           {"pred_lf0", result.pred_lf0},
                           {"samples", result.audio.length()},
                           {"hop_size", cfg.spectro.hop_size},
                           {"noise_scale", noise_scale}};
    const std::string sidecar_path = out_path + ".json";
    std::ofstream js(sidecar_path, std::ios::trunc);
    if (!js) throw aria::Error("cannot write sidecar: " + sidecar_path);
    js << sidecar.dump(2) << "\n";
    std::printf("wrote %lld samples to %s (+%s)\n",
                static_cast<long long>(result.audio.length()), out_path.c_str(),
                sidecar_path.c_str());
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
             const std::string& compare_checkpoint, const std::string& compare_config,
             const std::string& out_dir, double noise_scale, std::uint64_t seed_override,
             bool has_seed) {
    const aria::RunConfig cfg = aria::load_config(config_path);
    if (cfg.manifest.empty()) throw aria::ConfigError("config: 'manifest' path is required for eval");
    const auto entries = aria::parse_corpus(cfg.manifest, cfg.spectro.hop_size);

    aria::TrainState<Scalar> state(cfg);
    aria::load_checkpoint(state, aria::arch_fingerprint(cfg), checkpoint_path);
    aria::Rng rng(has_seed ? seed_override : cfg.train.seed);
    aria::EvalReport report = aria::evaluate(state.model, entries, noise_scale, rng);

    fs::create_directories(out_dir);
    {
        std::ofstream csv(fs::path(out_dir) / "report.csv", std::ios::trunc);
        if (!csv) throw aria::Error("cannot write eval report CSV");
        csv << aria::eval_report_csv(report);
    }
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        const auto ref_mel = aria::mel_spectrogram(entries[i].audio, cfg.spectro);
        const auto gen_mel = aria::mel_spectrogram(report.generated[i], cfg.spectro);
        char name[64];
        std::snprintf(name, sizeof name, "mel_%04zu.pgm", i);
        aria::write_mel_comparison_pgm(ref_mel, gen_mel, (fs::path(out_dir) / name).string());
    }

    std::vector<int> compare_devs;
    std::string primary_label =
        cfg.arch.note_normalization ? "note-normalized durations" : "raw durations";
    std::string secondary_label;
    if (!compare_checkpoint.empty()) {
        const aria::RunConfig ccfg =
            aria::load_config(compare_config.empty() ? config_path : compare_config);
        aria::TrainState<Scalar> cstate(ccfg);
        aria::load_checkpoint(cstate, aria::arch_fingerprint(ccfg), compare_checkpoint);
        aria::Rng crng(has_seed ? seed_override : ccfg.train.seed);
        aria::EvalReport creport = aria::evaluate(cstate.model, entries, noise_scale, crng);
        compare_devs = creport.dur_deviations;
        secondary_label = ccfg.arch.note_normalization ? "note-normalized durations" : "raw durations";
    }
    aria::write_duration_histogram_svg(report.dur_deviations, compare_devs, primary_label,
                                       secondary_label,
                                       (fs::path(out_dir) / "duration_hist.svg").string());

    const auto show = [](const std::optional<double>& v) { return v ? *v : -1.0; };
    std::printf("clips=%zu f0_mae_hz=%.4f dur_mae_frames=%.4f mel_l1=%.4f\n", report.rows.size(),
                show(report.f0_mae_hz), show(report.dur_mae_frames), show(report.mel_l1_val));
    for (const aria::ClipEval& r : report.rows)
        if (!r.warning.empty()) std::printf("warning: %s: %s\n", r.id.c_str(), r.warning.c_str());
    std::printf("report written to %s\n", out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"aria: score-conditioned singing synthesis"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, score_path, out_path;
    std::string compare_checkpoint, compare_config;
    double noise_scale = 0.0;
    std::uint64_t seed = 0;
    bool has_seed = false;

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
            has_seed = true;
        });
    };

    CLI::App* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
    gen->add_option("--config", config_path, "run config JSON")->required();
    gen->add_option("--out", out_path, "output directory")->required();
    add_seed(gen);

    CLI::App* train = app.add_subcommand("train", "train from a corpus manifest");
    train->add_option("--config", config_path, "run config JSON")->required();
    train->add_option("--checkpoint", checkpoint_path, "resume from checkpoint");
    add_seed(train);

    CLI::App* synth = app.add_subcommand("synth", "synthesize audio from a score");
    synth->add_option("--config", config_path, "run config JSON")->required();
    synth->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
    synth->add_option("--score", score_path, "score file (one manifest-format record)")->required();
    synth->add_option("--out", out_path, "output WAV path")->required();
    synth->add_option("--noise-scale", noise_scale, "prior sampling scale (default 0)");
    add_seed(synth);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a labeled corpus");
    eval->add_option("--config", config_path, "run config JSON")->required();
    eval->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
    eval->add_option("--compare-checkpoint", compare_checkpoint,
                     "second checkpoint for the duration-deviation comparison");
    eval->add_option("--compare-config", compare_config,
                     "config for the comparison checkpoint (defaults to --config)");
    eval->add_option("--out", out_path, "report output directory")->required();
    eval->add_option("--noise-scale", noise_scale, "prior sampling scale (default 0)");
    add_seed(eval);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_corpus(config_path, out_path, seed, has_seed);
        if (train->parsed()) return cmd_train(config_path, checkpoint_path, seed, has_seed);
        if (synth->parsed())
            return cmd_synth(config_path, checkpoint_path, score_path, out_path, noise_scale, seed,
                             has_seed);
        if (eval->parsed())
            return cmd_eval(config_path, checkpoint_path, compare_checkpoint, compare_config,
                            out_path, noise_scale, seed, has_seed);
        std::fprintf(stderr, "error: unknown subcommand\n");
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
