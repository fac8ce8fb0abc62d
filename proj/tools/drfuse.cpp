// drfuse: synthetic data generation, two-stage training, history-guided
// fusion rollout, and report aggregation in one binary. Every subcommand is
// deterministic under --seed; config files are plain key=value with CLI
// flags taking precedence.

#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "drfuse/checkpoint.hpp"
#include "drfuse/data.hpp"
#include "drfuse/metrics.hpp"
#include "drfuse/sampler.hpp"
#include "drfuse/train.hpp"

using namespace drfuse;

static KeyValueFile default_config() {
    KeyValueFile c;
    c.set_int("seed", 1);
    // codec
    c.set_int("codec_channels", 8);
    c.set_int("codec_hidden", 32);
    c.set_int("codec_codebook", 64);
    // denoiser
    c.set_int("width", 64);
    c.set_int("heads", 4);
    c.set_int("blocks", 4);
    c.set_int("patch", 2);
    c.set_int("window", 8);
    // sampler
    c.set_int("steps", 50);
    c.set_double("scale", 2.0);
    c.set_double("sigma_stab", 0.02);
    c.set_int("refine_cadence", 5);
    c.set_double("refine_gamma", 0.3);
    c.set_double("refine_lambda", 1.0);
    c.set_int("refine_inner", 10);
    c.set_double("refine_step", 0.1);
    c.set_double("refine_w_grad", 1.0);
    c.set_double("refine_w_int", 1.0);
    // stage I
    c.set_int("s1_epochs", 2);
    c.set_int("s1_batch", 4);
    c.set_double("s1_lr", 1e-4);
    c.set_double("s1_wd", 0.01);
    c.set_double("lambda_vq", 1.0);
    c.set_double("lambda_freq", 0.1);
    c.set_double("lambda_temp", 1.0);
    // stage II
    c.set_int("s2_steps_a", 200);
    c.set_int("s2_steps_b", 120);
    c.set_int("s2_batch", 2);
    c.set_double("s2_lr", 1e-4);
    c.set_double("s2_wd", 0.01);
    c.set_int("freeze_backbone", 1);
    c.set_double("w_perc", 0.1);
    c.set_double("w_ssim", 1.0);
    c.set_double("w_grad", 1.0);
    c.set_double("w_int", 1.0);
    // generator
    c.set_int("gen_height", 24);
    c.set_int("gen_width", 24);
    c.set_int("gen_frames", 16);
    c.set_int("gen_sequences", 4);
    c.set_int("gen_objects", 2);
    c.set_int("gen_max_speed", 1);
    c.set_double("gen_flicker", 0.15);
    c.set_double("gen_ir_noise", 0.02);
    return c;
}

static KeyValueFile merged_config(const std::string& path) {
    KeyValueFile c = default_config();
    if (path.empty()) return c;
    KeyValueFile user = KeyValueFile::load(path);
    std::set<std::string> known;
    for (const auto& [k, v] : c.entries()) known.insert(k);
    user.require_known(known);
    for (const auto& [k, v] : user.entries()) c.set(k, v);
    return c;
}

static CodecConfig codec_config_of(const KeyValueFile& c) {
    CodecConfig cc;
    cc.channels = static_cast<int>(c.get_int("codec_channels"));
    cc.hidden = static_cast<int>(c.get_int("codec_hidden"));
    cc.codebook = static_cast<int>(c.get_int("codec_codebook"));
    return cc;
}

static DenoiserConfig denoiser_config_of(const KeyValueFile& c, int frame_h, int frame_w) {
    DenoiserConfig dc;
    dc.width = static_cast<int>(c.get_int("width"));
    dc.heads = static_cast<int>(c.get_int("heads"));
    dc.blocks = static_cast<int>(c.get_int("blocks"));
    dc.patch = static_cast<int>(c.get_int("patch"));
    dc.window = static_cast<int>(c.get_int("window"));
    dc.channels = static_cast<int>(c.get_int("codec_channels"));
    dc.latent_h = frame_h / CodecConfig::factor;
    dc.latent_w = frame_w / CodecConfig::factor;
    return dc;
}

static SamplerSettings sampler_settings_of(const KeyValueFile& c) {
    SamplerSettings s;
    s.steps = static_cast<int>(c.get_int("steps"));
    s.guidance.scale = c.get_double("scale");
    s.guidance.sigma_stab = c.get_double("sigma_stab");
    s.refine.cadence = static_cast<int>(c.get_int("refine_cadence"));
    s.refine.gamma = c.get_double("refine_gamma");
    s.refine.lambda_reg = c.get_double("refine_lambda");
    s.refine.inner_steps = static_cast<int>(c.get_int("refine_inner"));
    s.refine.step_size = c.get_double("refine_step");
    s.refine.w_grad = c.get_double("refine_w_grad");
    s.refine.w_int = c.get_double("refine_w_int");
    s.seed = static_cast<std::uint64_t>(c.get_int("seed"));
    return s;
}

static Codec load_codec(const std::string& dir) {
    Codec codec = Codec::from_config(load_checkpoint_config(dir));
    load_checkpoint(dir, codec.named_tensors());
    return codec;
}

// The report describes the exported 8-bit frames, so metrics go through the
// same quantization the PPM writer applies; `eval` on the written files
// reproduces `fuse`'s report exactly.
static Tensor quantize_roundtrip(const Tensor& t) {
    Tensor out(t.shape);
    for (std::size_t i = 0; i < t.data.size(); ++i)
        out.data[i] = static_cast<double>(quantize_u8(t.data[i])) / 255.0;
    return out;
}

// Metrics against both sources, with temporal terms driven by block-matching
// flow between consecutive fused frames.
static std::vector<MetricsRow> fused_report(const std::vector<Tensor>& fused,
                                            const std::vector<Tensor>& ir,
                                            const std::vector<Tensor>& vi) {
    std::vector<Tensor> flows, masks;
    for (std::size_t t = 1; t < fused.size(); ++t) {
        Tensor fwd = estimate_flow(fused[t - 1], fused[t], 4, 2);
        Tensor bwd = estimate_flow(fused[t], fused[t - 1], 4, 2);
        masks.push_back(occlusion_mask(fwd, bwd));
        flows.push_back(std::move(fwd));
    }
    return evaluate_sequence(fused, ir, vi, flows, masks);
}

static void write_frames(const std::string& dir, const char* stem,
                         const std::vector<Tensor>& frames, int first_index = 0) {
    for (std::size_t t = 0; t < frames.size(); ++t) {
        std::string name = frame_name(stem, first_index + static_cast<int>(t), "ppm");
        Tensor rgb = frames[t].rank() == 3 ? frames[t] : gray_to_rgb(frames[t]);
        save_ppm(dir + "/" + name, rgb);
    }
}

// ---------------------------------------------------------------------------

static int cmd_generate(const KeyValueFile& c, const std::string& out) {
    std::filesystem::create_directories(out);
    const std::uint64_t seed = static_cast<std::uint64_t>(c.get_int("seed"));
    const int n = static_cast<int>(c.get_int("gen_sequences"));
    if (n < 1) throw std::runtime_error("gen_sequences must be at least 1");
    KeyValueFile dm;
    dm.set_int("sequences", n);
    for (const char* k : {"gen_height", "gen_width", "gen_frames", "gen_objects",
                          "gen_max_speed"})
        dm.set_int(k, c.get_int(k));
    dm.set_double("gen_flicker", c.get_double("gen_flicker"));
    dm.set_double("gen_ir_noise", c.get_double("gen_ir_noise"));
    dm.set_int("seed", static_cast<long long>(seed));
    for (int s = 0; s < n; ++s) {
        Rng srng = Rng(seed).split(500 + static_cast<std::uint64_t>(s));
        SceneConfig sc = make_random_scene(
            static_cast<int>(c.get_int("gen_height")), static_cast<int>(c.get_int("gen_width")),
            static_cast<int>(c.get_int("gen_frames")), static_cast<int>(c.get_int("gen_objects")),
            static_cast<int>(c.get_int("gen_max_speed")), c.get_double("gen_flicker"),
            c.get_double("gen_ir_noise"), srng);
        Rng grng = Rng(seed).split(600 + static_cast<std::uint64_t>(s));
        GroundTruthBundle b = generate_sequence(sc, grng);
        char name[32];
        std::snprintf(name, sizeof(name), "seq_%04d", s);
        save_sequence(out + "/" + name, b, sc);
        dm.set(name, std::string(name) + "/manifest.txt");
    }
    dm.save(out + "/manifest.txt");
    std::printf("generate: %d sequences x %lld frames -> %s\n", n, c.get_int("gen_frames"),
                out.c_str());
    return 0;
}

static int cmd_train_stage1(const KeyValueFile& c, const std::string& data,
                            const std::string& out) {
    Dataset d = load_dataset(data);
    Stage1Settings st;
    st.epochs = static_cast<int>(c.get_int("s1_epochs"));
    st.batch = static_cast<int>(c.get_int("s1_batch"));
    st.opt.lr = c.get_double("s1_lr");
    st.opt.weight_decay = c.get_double("s1_wd");
    st.lambda_vq = c.get_double("lambda_vq");
    st.lambda_freq = c.get_double("lambda_freq");
    st.lambda_temp = c.get_double("lambda_temp");
    st.seed = static_cast<std::uint64_t>(c.get_int("seed"));
    Codec codec(codec_config_of(c));
    Rng rng = Rng(st.seed).split(3);
    codec.init(rng);
    std::vector<Stage1Row> rows = stage1_train(codec, d, st);
    std::filesystem::create_directories(out);
    save_checkpoint(out, codec.named_tensors(), codec.model_config());
    save_stage1_csv(out + "/loss_stage1.csv", rows);
    std::printf("stage1: %zu steps, loss %.6g -> %.6g\n", rows.size(), rows.front().total,
                rows.back().total);
    return 0;
}

static int cmd_train_stage2(const KeyValueFile& c, const std::string& data,
                            const std::string& codec_dir, const std::string& out) {
    Dataset d = load_dataset(data);
    Codec codec = load_codec(codec_dir);
    const Tensor& f0 = d.seqs[0].ir.at(0);
    DenoiserConfig dc = denoiser_config_of(c, f0.size(0), f0.size(1));
    Denoiser dit(dc);
    ConditionAdapter adapter(dc);
    const std::uint64_t seed = static_cast<std::uint64_t>(c.get_int("seed"));
    Rng drng = Rng(seed).split(4);
    dit.init(drng);
    Rng arng = Rng(seed).split(5);
    adapter.init(arng);
    Stage2Settings st;
    st.steps_a = static_cast<int>(c.get_int("s2_steps_a"));
    st.steps_b = static_cast<int>(c.get_int("s2_steps_b"));
    st.batch = static_cast<int>(c.get_int("s2_batch"));
    st.opt_a.lr = c.get_double("s2_lr");
    st.opt_a.weight_decay = c.get_double("s2_wd");
    st.opt_b = st.opt_a;
    st.schedule_steps = static_cast<int>(c.get_int("steps"));
    st.sigma_stab = c.get_double("sigma_stab");
    st.freeze_backbone_b = c.get_bool_or("freeze_backbone", true);
    st.fusion.perceptual = c.get_double("w_perc");
    st.fusion.ssim = c.get_double("w_ssim");
    st.fusion.gradient = c.get_double("w_grad");
    st.fusion.intensity = c.get_double("w_int");
    st.seed = seed;
    std::vector<Stage2Row> rows = stage2_pretrain(dit, codec, d, st);
    std::size_t n_a = rows.size();
    std::vector<Stage2Row> rows_b = stage2_adapter_train(dit, adapter, codec, d, st);
    rows.insert(rows.end(), rows_b.begin(), rows_b.end());
    NamedTensors all = dit.named_tensors();
    for (auto& nt : adapter.named_tensors()) all.push_back(nt);
    std::filesystem::create_directories(out);
    save_checkpoint(out, all, dit.model_config());
    save_stage2_csv(out + "/loss_stage2.csv", rows);
    std::printf("stage2: phase A %zu steps (%.6g -> %.6g), phase B %zu steps (%.6g -> %.6g)\n",
                n_a, rows.front().loss, rows[n_a - 1].loss, rows_b.size(), rows_b.front().loss,
                rows_b.back().loss);
    return 0;
}

struct FuseFlags {
    std::string label;
    std::vector<std::string> ablate;
    bool ablate_guidance = false;
    bool diffmaps = false;
};

static int cmd_fuse(const KeyValueFile& c, const std::string& ir_manifest,
                    const std::string& vi_manifest, const std::string& codec_dir,
                    const std::string& model_dir, const std::string& out, const FuseFlags& ff) {
    KeyValueFile irm = KeyValueFile::load(ir_manifest);
    KeyValueFile vim = KeyValueFile::load(vi_manifest);
    std::vector<Tensor> ir = load_frame_list(irm, dir_of(ir_manifest), "ir");
    std::vector<Tensor> vi = load_frame_list(vim, dir_of(vi_manifest), "vi");
    if (ir.empty()) throw std::runtime_error(ir_manifest + ": no ir frames listed");
    if (ir.size() != vi.size())
        throw std::runtime_error("sequence length mismatch: " + std::to_string(ir.size()) +
                                 " ir vs " + std::to_string(vi.size()) + " vi frames");

    Codec codec = load_codec(codec_dir);
    DenoiserConfig dc = Denoiser::config_from(load_checkpoint_config(model_dir));
    Denoiser dit(dc);
    ConditionAdapter adapter(dc);
    NamedTensors all = dit.named_tensors();
    for (auto& nt : adapter.named_tensors()) all.push_back(nt);
    load_checkpoint(model_dir, all);

    SamplerSettings ss = sampler_settings_of(c);
    if (ff.ablate_guidance) ss.guidance.scale = 0.0;  // history-free branch only
    for (const std::string& a : ff.ablate) {
        if (a == "hg") ss.ablate_guidance = true;
        else if (a == "adapter") ss.ablate_adapter = true;
        else if (a == "refine") ss.ablate_refine = true;
        else if (a == "h2") ss.ablate_h2 = true;
        else throw std::runtime_error("unknown ablation: " + a);
    }
    std::string label = ff.label;
    if (label.empty()) {
        if (ss.ablate_guidance) label = "no_hg";
        else if (ss.ablate_adapter) label = "no_adapter";
        else if (ss.ablate_refine) label = "no_refine";
        else if (ss.ablate_h2) label = "no_h2";
        else if (ss.guidance.scale == 0.0) label = "h0_only";
        else label = "full";
    }

    FusionModels models{&codec, &dit, &adapter};
    std::vector<Tensor> fused = rollout(ir, vi, models, ss);

    std::filesystem::create_directories(out);
    write_frames(out, "fused", fused);
    std::vector<Tensor> fused_q;
    fused_q.reserve(fused.size());
    for (const Tensor& f : fused) fused_q.push_back(quantize_roundtrip(f));
    save_metrics_csv(out + "/report.csv", fused_report(fused_q, ir, vi));
    KeyValueFile run;
    run.set("label", label);
    run.set_double("scale", ss.guidance.scale);
    run.set_int("steps", ss.steps);
    run.set_int("seed", static_cast<long long>(ss.seed));
    run.set_int("frames", static_cast<long long>(fused.size()));
    run.save(out + "/run.txt");
    if (ff.diffmaps && fused.size() >= 2)
        write_frames(out, "diff", diff_map_render(fused), 1);
    std::printf("fuse: %zu frames (%s) -> %s\n", fused.size(), label.c_str(), out.c_str());
    return 0;
}

static int cmd_eval(const std::string& ir_manifest, const std::string& vi_manifest,
                    const std::string& fused_dir, const std::string& out_csv, bool diffmaps) {
    KeyValueFile irm = KeyValueFile::load(ir_manifest);
    KeyValueFile vim = KeyValueFile::load(vi_manifest);
    std::vector<Tensor> ir = load_frame_list(irm, dir_of(ir_manifest), "ir");
    std::vector<Tensor> vi = load_frame_list(vim, dir_of(vi_manifest), "vi");
    std::vector<Tensor> fused;
    for (int t = 0;; ++t) {
        std::string path = fused_dir + "/" + frame_name("fused", t, "ppm");
        if (!std::filesystem::exists(path)) break;
        fused.push_back(rgb_to_gray(load_ppm(path)));
    }
    if (fused.empty()) throw std::runtime_error(fused_dir + ": no fused_*.ppm frames");
    if (fused.size() != ir.size() || fused.size() != vi.size())
        throw std::runtime_error("sequence length mismatch between fused frames and sources");
    save_metrics_csv(out_csv, fused_report(fused, ir, vi));
    if (diffmaps && fused.size() >= 2) {
        std::string dir = dir_of(out_csv);
        write_frames(dir.empty() ? "." : dir, "diff", diff_map_render(fused), 1);
    }
    std::printf("eval: %zu frames -> %s\n", fused.size(), out_csv.c_str());
    return 0;
}

struct RunSummary {
    std::string label;
    double cc = 0, en = 0, ssim = 0, diff_energy = 0, warped_residual = 0;
};

static RunSummary summarize_run(const std::string& dir) {
    std::vector<MetricsRow> rows = load_metrics_csv(dir + "/report.csv");
    if (rows.empty()) throw std::runtime_error(dir + ": empty report");
    RunSummary s;
    std::string base = std::filesystem::path(dir).filename().string();
    if (base.empty()) base = dir;
    s.label = base;
    if (std::filesystem::exists(dir + "/run.txt"))
        s.label = KeyValueFile::load(dir + "/run.txt").get_or("label", base);
    long long n_t = 0;
    for (const MetricsRow& r : rows) {
        s.cc += r.cc;
        s.en += r.en;
        s.ssim += r.ssim;
        if (r.frame >= 1) {
            s.diff_energy += r.diff_energy;
            s.warped_residual += r.warped_residual;
            ++n_t;
        }
    }
    double n = static_cast<double>(rows.size());
    s.cc /= n;
    s.en /= n;
    s.ssim /= n;
    if (n_t > 0) {
        s.diff_energy /= static_cast<double>(n_t);
        s.warped_residual /= static_cast<double>(n_t);
    }
    return s;
}

static int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_csv) {
    if (run_dirs.empty()) throw std::runtime_error("report: need at least one run directory");
    std::vector<RunSummary> rs;
    for (const std::string& d : run_dirs) rs.push_back(summarize_run(d));
    std::string csv = "label,cc,en,ssim,diff_energy,warped_residual\n";
    char buf[256];
    for (const RunSummary& s : rs) {
        std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", s.label.c_str(), s.cc,
                      s.en, s.ssim, s.diff_energy, s.warped_residual);
        csv += buf;
    }
    if (!out_csv.empty()) {
        std::ofstream f(out_csv, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + out_csv);
        f << csv;
    }
    std::printf("%-12s %10s %10s %10s %12s %14s\n", "label", "cc", "en", "ssim", "diff_energy",
                "warped_resid");
    for (const RunSummary& s : rs)
        std::printf("%-12s %10.6f %10.6f %10.6f %12.8f %14.8f\n", s.label.c_str(), s.cc, s.en,
                    s.ssim, s.diff_energy, s.warped_residual);
    return 0;
}

// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
    CLI::App app{"drift-resilient infrared/visible video fusion"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_dir, codec_dir, model_dir;
    std::string ir_manifest, vi_manifest, fused_dir, out_csv;
    long long seed = -1;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file");
        cmd->add_option("--seed", seed, "master RNG seed");
    };

    CLI::App* g = app.add_subcommand("generate", "write a synthetic IR/VI benchmark dataset");
    add_common(g);
    g->add_option("--out", out_dir, "output dataset directory")->required();
    long long g_sequences = 0, g_frames = 0, g_height = 0, g_width = 0, g_objects = 0,
              g_max_speed = 0;
    double g_flicker = 0, g_ir_noise = 0;
    g->add_option("--sequences", g_sequences, "number of sequences");
    g->add_option("--frames", g_frames, "frames per sequence");
    g->add_option("--height", g_height, "frame height");
    g->add_option("--width", g_width, "frame width");
    g->add_option("--objects", g_objects, "moving objects per scene");
    g->add_option("--max-speed", g_max_speed, "max |velocity| in px/frame");
    g->add_option("--flicker", g_flicker, "visible-band flicker amplitude");
    g->add_option("--ir-noise", g_ir_noise, "IR sensor noise sigma");

    CLI::App* t1 = app.add_subcommand("train-stage1", "train the latent codec");
    add_common(t1);
    t1->add_option("--data", data_dir, "dataset directory")->required();
    t1->add_option("--out", out_dir, "checkpoint output directory")->required();
    long long t1_epochs = 0, t1_batch = 0;
    double t1_lr = 0, t1_lambda_temp = -1;
    t1->add_option("--epochs", t1_epochs, "training epochs");
    t1->add_option("--batch", t1_batch, "clips per step");
    t1->add_option("--lr", t1_lr, "learning rate");
    t1->add_option("--lambda-temp", t1_lambda_temp, "temporal loss weight");

    CLI::App* t2 = app.add_subcommand("train-stage2", "train the history-conditioned denoiser");
    add_common(t2);
    t2->add_option("--data", data_dir, "dataset directory")->required();
    t2->add_option("--codec", codec_dir, "stage-1 checkpoint directory")->required();
    t2->add_option("--out", out_dir, "checkpoint output directory")->required();
    long long t2_steps_a = -1, t2_steps_b = -1, t2_batch = 0;
    t2->add_option("--steps-a", t2_steps_a, "denoiser pretraining steps");
    t2->add_option("--steps-b", t2_steps_b, "adapter fine-tuning steps");
    t2->add_option("--batch", t2_batch, "samples per step");

    CLI::App* fz = app.add_subcommand("fuse", "run the guided fusion rollout");
    add_common(fz);
    fz->add_option("--ir", ir_manifest, "IR sequence manifest")->required();
    fz->add_option("--vi", vi_manifest, "visible sequence manifest")->required();
    fz->add_option("--codec", codec_dir, "stage-1 checkpoint directory")->required();
    fz->add_option("--model", model_dir, "stage-2 checkpoint directory")->required();
    fz->add_option("--out", out_dir, "output run directory")->required();
    FuseFlags ff;
    double fz_scale = 0;
    long long fz_steps = 0;
    fz->add_option("--scale", fz_scale, "guidance scale s");
    fz->add_option("--steps", fz_steps, "reverse diffusion steps");
    fz->add_option("--ablate", ff.ablate, "drop a component: hg, adapter, refine, h2")
        ->check(CLI::IsMember({"hg", "adapter", "refine", "h2"}));
    fz->add_flag("--ablate-guidance", ff.ablate_guidance,
                 "pure-noise history branch only (same as --scale 0)");
    fz->add_flag("--diffmaps", ff.diffmaps, "write consecutive-frame difference maps");
    fz->add_option("--label", ff.label, "run label for reports");

    CLI::App* ev = app.add_subcommand("eval", "score an existing fused sequence");
    ev->add_option("--ir", ir_manifest, "IR sequence manifest")->required();
    ev->add_option("--vi", vi_manifest, "visible sequence manifest")->required();
    ev->add_option("--fused", fused_dir, "directory with fused_*.ppm frames")->required();
    ev->add_option("--out", out_csv, "metrics CSV output path")->required();
    bool ev_diffmaps = false;
    ev->add_flag("--diffmaps", ev_diffmaps, "write difference maps next to the CSV");

    CLI::App* rp = app.add_subcommand("report", "aggregate run reports into one table");
    std::vector<std::string> run_dirs;
    rp->add_option("runs", run_dirs, "run directories containing report.csv")->required();
    rp->add_option("--out", out_csv, "write the aggregated CSV here");

    CLI11_PARSE(app, argc, argv);

    try {
        KeyValueFile c = merged_config(config_path);
        if (seed >= 0) c.set_int("seed", seed);
        if (g->parsed()) {
            if (g->count("--sequences")) c.set_int("gen_sequences", g_sequences);
            if (g->count("--frames")) c.set_int("gen_frames", g_frames);
            if (g->count("--height")) c.set_int("gen_height", g_height);
            if (g->count("--width")) c.set_int("gen_width", g_width);
            if (g->count("--objects")) c.set_int("gen_objects", g_objects);
            if (g->count("--max-speed")) c.set_int("gen_max_speed", g_max_speed);
            if (g->count("--flicker")) c.set_double("gen_flicker", g_flicker);
            if (g->count("--ir-noise")) c.set_double("gen_ir_noise", g_ir_noise);
            return cmd_generate(c, out_dir);
        }
        if (t1->parsed()) {
            if (t1->count("--epochs")) c.set_int("s1_epochs", t1_epochs);
            if (t1->count("--batch")) c.set_int("s1_batch", t1_batch);
            if (t1->count("--lr")) c.set_double("s1_lr", t1_lr);
            if (t1->count("--lambda-temp")) c.set_double("lambda_temp", t1_lambda_temp);
            return cmd_train_stage1(c, data_dir, out_dir);
        }
        if (t2->parsed()) {
            if (t2->count("--steps-a")) c.set_int("s2_steps_a", t2_steps_a);
            if (t2->count("--steps-b")) c.set_int("s2_steps_b", t2_steps_b);
            if (t2->count("--batch")) c.set_int("s2_batch", t2_batch);
            return cmd_train_stage2(c, data_dir, codec_dir, out_dir);
        }
        if (fz->parsed()) {
            if (fz->count("--scale")) c.set_double("scale", fz_scale);
            if (fz->count("--steps")) c.set_int("steps", fz_steps);
            return cmd_fuse(c, ir_manifest, vi_manifest, codec_dir, model_dir, out_dir, ff);
        }
        if (ev->parsed()) return cmd_eval(ir_manifest, vi_manifest, fused_dir, out_csv, ev_diffmaps);
        if (rp->parsed()) return cmd_report(run_dirs, out_csv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
