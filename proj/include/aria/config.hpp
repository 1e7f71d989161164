#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aria/corpus.hpp"
#include "aria/dsp.hpp"
#include "aria/error.hpp"

namespace aria {

using json = nlohmann::json;

/// Network sizes and ablation switches. phoneme_count counts voiced symbols;
/// id 0 is silence, so embedding tables hold phoneme_count + 1 rows and the
/// CTC output adds one more class for the blank.
struct ArchConfig {
    int phoneme_count = 16;
    int hidden = 96;
    int emb_phoneme = 48;
    int emb_pitch = 24;
    int emb_dur = 24;
    int pitch_range = 128;
    int dur_buckets = 32;
    int heads = 2;
    int ffn_hidden = 192;
    int text_blocks = 6;
    int f0_blocks = 6;
    int frame_prior_blocks = 4;
    int phoneme_pred_blocks = 2;
    int latent_dim = 64;
    int flow_depth = 4;
    int flow_hidden = 64;
    int posterior_layers = 4;
    int posterior_channels = 96;
    int posterior_kernel = 5;
    int gen_channels = 128;
    std::vector<int> upsample_rates = {8, 4, 2, 2};
    std::vector<int> resblock_kernels = {3, 7};
    std::vector<int> resblock_dilations = {1, 3};
    std::vector<int> mpd_periods = {2, 3, 5, 7, 11};
    std::vector<int> disc_channels = {8, 16, 32, 64};
    int msd_scales = 3;
    bool note_normalization = true;
    bool frame_prior_conv = false;
    bool remove_phoneme_predictor = false;
    bool remove_f0_predictor = false;
    bool remove_frame_prior = false;

    int inventory_size() const { return phoneme_count + 1; }
    int ctc_classes() const { return phoneme_count + 2; }

    void validate(int hop_size) const {
        if (phoneme_count < 1) throw ConfigError("arch: phoneme_count must be >= 1");
        if (hidden < 1 || latent_dim < 2 || latent_dim % 2 != 0)
            throw ConfigError("arch: hidden must be positive and latent_dim a positive even number");
        if (emb_phoneme + emb_pitch + emb_dur < 1) throw ConfigError("arch: empty embedding concat");
        if (heads < 1 || hidden % heads != 0) throw ConfigError("arch: heads must divide hidden");
        if (flow_depth < 0 || flow_hidden < 1) throw ConfigError("arch: bad flow sizes");
        if (posterior_layers < 1 || posterior_channels < 1 || posterior_kernel % 2 == 0)
            throw ConfigError("arch: posterior kernel must be odd, layers/channels positive");
        if (upsample_rates.empty()) throw ConfigError("arch: empty upsample_rates");
        int prod = 1;
        for (int r : upsample_rates) {
            if (r < 2) throw ConfigError("arch: upsample rates must be >= 2");
            prod *= r;
        }
        if (prod != hop_size)
            throw ConfigError("arch: upsample rates multiply to " + std::to_string(prod) +
                              " but hop_size is " + std::to_string(hop_size));
        if (resblock_kernels.empty() || resblock_dilations.empty())
            throw ConfigError("arch: empty resblock kernels/dilations");
        for (int k : resblock_kernels)
            if (k % 2 == 0) throw ConfigError("arch: resblock kernels must be odd");
        if (mpd_periods.empty() || disc_channels.empty() || msd_scales < 1)
            throw ConfigError("arch: empty discriminator settings");
        if (dur_buckets < 1 || pitch_range < 2) throw ConfigError("arch: bad embedding table sizes");
    }
};

struct TrainConfig {
    int steps = 2000;
    int slice_frames = 32;
    double segment_seconds = 2.0;
    double lr = 2e-4;
    double beta1 = 0.8;
    double beta2 = 0.99;
    double adam_eps = 1e-9;
    double lr_decay = 0.999;
    std::uint64_t seed = 1234;
    double w_recon = 45.0;
    double w_kl = 1.0;
    double w_ctc = 1.0;
    double w_dur = 1.0;
    double w_lf0 = 1.0;
    double holdout_frac = 0.0;
    int checkpoint_every = 0;
    std::string train_scope = "full";

    void validate() const {
        if (steps < 1) throw ConfigError("train: steps must be >= 1");
        if (slice_frames < 1) throw ConfigError("train: slice_frames must be >= 1");
        if (segment_seconds <= 0.0) throw ConfigError("train: segment_seconds must be positive");
        if (lr <= 0.0 || beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 || adam_eps <= 0.0)
            throw ConfigError("train: bad Adam settings");
        if (lr_decay <= 0.0 || lr_decay > 1.0) throw ConfigError("train: lr_decay outside (0,1]");
        if (holdout_frac < 0.0 || holdout_frac >= 1.0) throw ConfigError("train: holdout_frac outside [0,1)");
        if (train_scope != "full" && train_scope != "duration_only")
            throw ConfigError("train: train_scope must be 'full' or 'duration_only'");
    }
};

struct RunConfig {
    SpectrogramConfig spectro;
    ArchConfig arch;
    TrainConfig train;
    GenCorpusConfig gen;
    std::string manifest;
    std::string out_dir = "run";

    void validate() const {
        spectro.validate();
        arch.validate(spectro.hop_size);
        train.validate();
        gen.validate();
        if (arch.phoneme_count != gen.phoneme_count)
            throw ConfigError("config: arch.phoneme_count and gen.phoneme_count disagree");
        if (spectro.sample_rate != gen.sample_rate || spectro.hop_size != gen.hop_size)
            throw ConfigError("config: spectro and gen disagree on sample_rate/hop_size");
    }
};

namespace detail {

template <typename T>
void get_field(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

inline void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(std::string("config: ") + section + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) { known = true; break; }
        if (!known)
            throw ConfigError(std::string("config: unknown key '") + it.key() + "' in " + section);
    }
}

}  // namespace detail

inline void from_json_spectro(const json& j, SpectrogramConfig& c) {
    detail::check_keys(j, "spectro",
                       {"sample_rate", "fft_size", "hop_size", "win_size", "mel_bins", "fmin", "fmax"});
    detail::get_field(j, "sample_rate", c.sample_rate);
    detail::get_field(j, "fft_size", c.fft_size);
    detail::get_field(j, "hop_size", c.hop_size);
    detail::get_field(j, "win_size", c.win_size);
    detail::get_field(j, "mel_bins", c.mel_bins);
    detail::get_field(j, "fmin", c.fmin);
    detail::get_field(j, "fmax", c.fmax);
}

inline json to_json_spectro(const SpectrogramConfig& c) {
    return json{{"sample_rate", c.sample_rate}, {"fft_size", c.fft_size},   {"hop_size", c.hop_size},
                {"win_size", c.win_size},       {"mel_bins", c.mel_bins},   {"fmin", c.fmin},
                {"fmax", c.fmax}};
}

inline void from_json_arch(const json& j, ArchConfig& c) {
    detail::check_keys(
        j, "arch",
        {"phoneme_count", "hidden", "emb_phoneme", "emb_pitch", "emb_dur", "pitch_range", "dur_buckets",
         "heads", "ffn_hidden", "text_blocks", "f0_blocks", "frame_prior_blocks", "phoneme_pred_blocks",
         "latent_dim", "flow_depth", "flow_hidden", "posterior_layers", "posterior_channels",
         "posterior_kernel", "gen_channels", "upsample_rates", "resblock_kernels", "resblock_dilations",
         "mpd_periods", "disc_channels", "msd_scales", "note_normalization", "frame_prior_conv",
         "remove_phoneme_predictor", "remove_f0_predictor", "remove_frame_prior"});
    detail::get_field(j, "phoneme_count", c.phoneme_count);
    detail::get_field(j, "hidden", c.hidden);
    detail::get_field(j, "emb_phoneme", c.emb_phoneme);
    detail::get_field(j, "emb_pitch", c.emb_pitch);
    detail::get_field(j, "emb_dur", c.emb_dur);
    detail::get_field(j, "pitch_range", c.pitch_range);
    detail::get_field(j, "dur_buckets", c.dur_buckets);
    detail::get_field(j, "heads", c.heads);
    detail::get_field(j, "ffn_hidden", c.ffn_hidden);
    detail::get_field(j, "text_blocks", c.text_blocks);
    detail::get_field(j, "f0_blocks", c.f0_blocks);
    detail::get_field(j, "frame_prior_blocks", c.frame_prior_blocks);
    detail::get_field(j, "phoneme_pred_blocks", c.phoneme_pred_blocks);
    detail::get_field(j, "latent_dim", c.latent_dim);
    detail::get_field(j, "flow_depth", c.flow_depth);
    detail::get_field(j, "flow_hidden", c.flow_hidden);
    detail::get_field(j, "posterior_layers", c.posterior_layers);
    detail::get_field(j, "posterior_channels", c.posterior_channels);
    detail::get_field(j, "posterior_kernel", c.posterior_kernel);
    detail::get_field(j, "gen_channels", c.gen_channels);
    detail::get_field(j, "upsample_rates", c.upsample_rates);
    detail::get_field(j, "resblock_kernels", c.resblock_kernels);
    detail::get_field(j, "resblock_dilations", c.resblock_dilations);
    detail::get_field(j, "mpd_periods", c.mpd_periods);
    detail::get_field(j, "disc_channels", c.disc_channels);
    detail::get_field(j, "msd_scales", c.msd_scales);
    detail::get_field(j, "note_normalization", c.note_normalization);
    detail::get_field(j, "frame_prior_conv", c.frame_prior_conv);
    detail::get_field(j, "remove_phoneme_predictor", c.remove_phoneme_predictor);
    detail::get_field(j, "remove_f0_predictor", c.remove_f0_predictor);
    detail::get_field(j, "remove_frame_prior", c.remove_frame_prior);
}

inline json to_json_arch(const ArchConfig& c) {
    return json{{"phoneme_count", c.phoneme_count},
                {"hidden", c.hidden},
                {"emb_phoneme", c.emb_phoneme},
                {"emb_pitch", c.emb_pitch},
                {"emb_dur", c.emb_dur},
                {"pitch_range", c.pitch_range},
                {"dur_buckets", c.dur_buckets},
                {"heads", c.heads},
                {"ffn_hidden", c.ffn_hidden},
                {"text_blocks", c.text_blocks},
                {"f0_blocks", c.f0_blocks},
                {"frame_prior_blocks", c.frame_prior_blocks},
                {"phoneme_pred_blocks", c.phoneme_pred_blocks},
                {"latent_dim", c.latent_dim},
                {"flow_depth", c.flow_depth},
                {"flow_hidden", c.flow_hidden},
                {"posterior_layers", c.posterior_layers},
                {"posterior_channels", c.posterior_channels},
                {"posterior_kernel", c.posterior_kernel},
                {"gen_channels", c.gen_channels},
                {"upsample_rates", c.upsample_rates},
                {"resblock_kernels", c.resblock_kernels},
                {"resblock_dilations", c.resblock_dilations},
                {"mpd_periods", c.mpd_periods},
                {"disc_channels", c.disc_channels},
                {"msd_scales", c.msd_scales},
                {"note_normalization", c.note_normalization},
                {"frame_prior_conv", c.frame_prior_conv},
                {"remove_phoneme_predictor", c.remove_phoneme_predictor},
                {"remove_f0_predictor", c.remove_f0_predictor},
                {"remove_frame_prior", c.remove_frame_prior}};
}

inline void from_json_train(const json& j, TrainConfig& c) {
    detail::check_keys(j, "train",
                       {"steps", "slice_frames", "segment_seconds", "lr", "beta1", "beta2", "adam_eps",
                        "lr_decay", "seed", "w_recon", "w_kl", "w_ctc", "w_dur", "w_lf0", "holdout_frac",
                        "checkpoint_every", "train_scope"});
    detail::get_field(j, "steps", c.steps);
    detail::get_field(j, "slice_frames", c.slice_frames);
    detail::get_field(j, "segment_seconds", c.segment_seconds);
    detail::get_field(j, "lr", c.lr);
    detail::get_field(j, "beta1", c.beta1);
    detail::get_field(j, "beta2", c.beta2);
    detail::get_field(j, "adam_eps", c.adam_eps);
    detail::get_field(j, "lr_decay", c.lr_decay);
    detail::get_field(j, "seed", c.seed);
    detail::get_field(j, "w_recon", c.w_recon);
    detail::get_field(j, "w_kl", c.w_kl);
    detail::get_field(j, "w_ctc", c.w_ctc);
    detail::get_field(j, "w_dur", c.w_dur);
    detail::get_field(j, "w_lf0", c.w_lf0);
    detail::get_field(j, "holdout_frac", c.holdout_frac);
    detail::get_field(j, "checkpoint_every", c.checkpoint_every);
    detail::get_field(j, "train_scope", c.train_scope);
}

inline json to_json_train(const TrainConfig& c) {
    return json{{"steps", c.steps},
                {"slice_frames", c.slice_frames},
                {"segment_seconds", c.segment_seconds},
                {"lr", c.lr},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"adam_eps", c.adam_eps},
                {"lr_decay", c.lr_decay},
                {"seed", c.seed},
                {"w_recon", c.w_recon},
                {"w_kl", c.w_kl},
                {"w_ctc", c.w_ctc},
                {"w_dur", c.w_dur},
                {"w_lf0", c.w_lf0},
                {"holdout_frac", c.holdout_frac},
                {"checkpoint_every", c.checkpoint_every},
                {"train_scope", c.train_scope}};
}

inline void from_json_gen(const json& j, GenCorpusConfig& c) {
    detail::check_keys(j, "gen",
                       {"songs", "phoneme_count", "pitch_set", "note_dur_min", "note_dur_max", "sample_rate",
                        "hop_size", "seed", "notes_min", "notes_max", "rest_prob", "max_phonemes_per_note"});
    detail::get_field(j, "songs", c.songs);
    detail::get_field(j, "phoneme_count", c.phoneme_count);
    detail::get_field(j, "pitch_set", c.pitch_set);
    detail::get_field(j, "note_dur_min", c.note_dur_min);
    detail::get_field(j, "note_dur_max", c.note_dur_max);
    detail::get_field(j, "sample_rate", c.sample_rate);
    detail::get_field(j, "hop_size", c.hop_size);
    detail::get_field(j, "seed", c.seed);
    detail::get_field(j, "notes_min", c.notes_min);
    detail::get_field(j, "notes_max", c.notes_max);
    detail::get_field(j, "rest_prob", c.rest_prob);
    detail::get_field(j, "max_phonemes_per_note", c.max_phonemes_per_note);
}

inline json to_json_gen(const GenCorpusConfig& c) {
    return json{{"songs", c.songs},
                {"phoneme_count", c.phoneme_count},
                {"pitch_set", c.pitch_set},
                {"note_dur_min", c.note_dur_min},
                {"note_dur_max", c.note_dur_max},
                {"sample_rate", c.sample_rate},
                {"hop_size", c.hop_size},
                {"seed", c.seed},
                {"notes_min", c.notes_min},
                {"notes_max", c.notes_max},
                {"rest_prob", c.rest_prob},
                {"max_phonemes_per_note", c.max_phonemes_per_note}};
}

inline RunConfig config_from_json(const json& j) {
    detail::check_keys(j, "config", {"spectro", "arch", "train", "gen", "manifest", "out_dir"});
    RunConfig c;
    if (j.contains("spectro")) from_json_spectro(j.at("spectro"), c.spectro);
    if (j.contains("arch")) from_json_arch(j.at("arch"), c.arch);
    if (j.contains("train")) from_json_train(j.at("train"), c.train);
    if (j.contains("gen")) from_json_gen(j.at("gen"), c.gen);
    detail::get_field(j, "manifest", c.manifest);
    detail::get_field(j, "out_dir", c.out_dir);
    // keep the corpus generator aligned with the signal settings unless the
    // config pins them explicitly
    if (!j.contains("gen") || !j.at("gen").contains("sample_rate")) c.gen.sample_rate = c.spectro.sample_rate;
    if (!j.contains("gen") || !j.at("gen").contains("hop_size")) c.gen.hop_size = c.spectro.hop_size;
    if (!j.contains("gen") || !j.at("gen").contains("phoneme_count")) c.gen.phoneme_count = c.arch.phoneme_count;
    c.validate();
    return c;
}

inline json config_to_json(const RunConfig& c) {
    return json{{"spectro", to_json_spectro(c.spectro)}, {"arch", to_json_arch(c.arch)},
                {"train", to_json_train(c.train)},       {"gen", to_json_gen(c.gen)},
                {"manifest", c.manifest},                {"out_dir", c.out_dir}};
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config: " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    try {
        return config_from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
}

inline void save_config(const RunConfig& c, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write config: " + path);
    f << config_to_json(c).dump(2) << "\n";
}

/// FNV-1a over the canonical JSON of the shape-determining sections. Two runs
/// agree on this iff their checkpoints are tensor-compatible.
inline std::uint64_t arch_fingerprint(const RunConfig& c) {
    const std::string s = json{{"spectro", to_json_spectro(c.spectro)}, {"arch", to_json_arch(c.arch)}}.dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace aria
