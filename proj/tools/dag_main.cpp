// dag: depth-aware guided diffusion at desk scale.
//
// Subcommands: gen-dataset, train-diffusion, train-prior, train-depth,
// sample, eval, sweep. Every command resolves defaults -> --config file ->
// explicit flags, writes the resolved config beside its outputs and is
// byte-reproducible under a fixed seed and thread count.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "dag/config.hpp"
#include "dag/run.hpp"

namespace fs = std::filesystem;
using namespace dag;

namespace {

struct Common {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<int> threads;
    bool print_config = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file; flags override its keys");
        cmd->add_option("--seed", seed, "root RNG seed");
        cmd->add_option("--threads", threads, "worker cap; never changes results");
        cmd->add_flag("--print-config", print_config, "dump the resolved config and exit");
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!config_path.empty()) cfg = config_from_file(config_path, cfg);
        if (seed) cfg.seed = *seed;
        if (threads) cfg.threads = *threads;
        return cfg;
    }
};

// applies threads, handles --print-config; returns true when the command
// should proceed
bool begin(const Common& common, RunConfig& cfg) {
    if (cfg.threads > 0) set_threads(cfg.threads);
    if (common.print_config) {
        std::cout << config_to_json(cfg).dump(2) << "\n";
        return false;
    }
    return true;
}

UNetConfig image_unet_config(const RunConfig& c) {
    UNetConfig u;
    u.in_channels = 1;
    u.base_channels = c.unet_base;
    u.channel_mults = c.unet_mults;
    u.blocks_per_level = c.unet_blocks;
    u.time_embed_dim = c.time_embed_dim;
    u.groups = c.groups;
    return u;
}

UNetConfig prior_unet_config(const RunConfig& c) {
    UNetConfig u;
    u.in_channels = 1;
    u.base_channels = c.prior_base;
    u.channel_mults = c.prior_mults;
    u.blocks_per_level = c.prior_blocks;
    u.time_embed_dim = c.time_embed_dim;
    u.groups = c.groups;
    return u;
}

struct LoadedUNet {
    UNetConfig cfg;
    std::unique_ptr<UNet> net;
    DiffusionSchedule sched;
    nlohmann::json meta;
};

LoadedUNet load_unet(const std::string& dir) {
    LoadedUNet l;
    l.meta = read_meta(dir);
    l.cfg = unet_config_from_meta(l.meta.at("unet"));
    l.sched = schedule_from_meta(l.meta.at("schedule"));
    Rng init(l.meta.value("init_seed", 0ull));
    l.net = std::make_unique<UNet>(l.cfg, init);
    load_params_from(TensorContainer::read(dir), l.net->params);
    l.net->params.set_requires_grad(false);
    return l;
}

struct LoadedHeads {
    std::unique_ptr<DepthHeads> heads;
    nlohmann::json meta;
};

LoadedHeads load_heads(const std::string& dir, const UNetConfig& unet_cfg) {
    LoadedHeads l;
    l.meta = read_meta(dir);
    std::vector<int> ts = l.meta.at("taps_strong").get<std::vector<int>>();
    std::vector<int> tw = l.meta.at("taps_weak").get<std::vector<int>>();
    int time_dim = l.meta.at("time_embed_dim");
    Rng init(l.meta.value("init_seed", 0ull));
    l.heads = std::make_unique<DepthHeads>(unet_cfg, ts, tw, time_dim, init);
    load_params_from(TensorContainer::read(dir), l.heads->params);
    l.heads->params.set_requires_grad(false);
    return l;
}

std::vector<int64_t> all_indices(int64_t n) {
    std::vector<int64_t> v(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

// shared denoiser training entry for train-diffusion / train-prior
void run_training(const RunConfig& cfg, const std::string& data_dir, const std::string& out,
                  const std::string& resume, bool prior_mode) {
    Dataset data = Dataset::load(data_dir);
    DiffusionSchedule sched = linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
    UNetConfig ucfg = prior_mode ? prior_unet_config(cfg) : image_unet_config(cfg);

    Tensor x0 = prior_mode ? depths_to_prior_domain(data.depths, cfg.prior_resolution)
                           : images_to_model_domain(data.images);
    if (!prior_mode)
        DAG_CHECK(data.H() == cfg.image_size && data.W() == cfg.image_size, config,
                  "dataset resolution does not match image_size");

    uint64_t init_seed = cfg.seed ^ (prior_mode ? 0x9410full : 0xd1f0ull);
    Rng init(init_seed);
    UNet net(ucfg, init);
    Adam opt(net.params, cfg.train_lr);
    int start_step = 0;
    if (!resume.empty()) {
        nlohmann::json meta = read_meta(resume);
        DAG_CHECK(unet_config_from_meta(meta.at("unet")).decoder_blocks() == ucfg.decoder_blocks(),
                  config, "resume checkpoint does not match the configured architecture");
        TensorContainer c = TensorContainer::read(resume);
        load_params_from(c, net.params);
        load_opt_state(c, net.params, opt, meta);
        start_step = meta.value("trained_steps", 0);
    }

    Rng train_root(cfg.seed ^ (prior_mode ? 0x791017ull : 0x7d1ff0ull));
    LossCurve curve = train_denoiser(net, opt, x0, all_indices(data.size()), sched, start_step,
                                     cfg.train_steps, cfg.train_batch, train_root);

    write_resolved_config(cfg, out);
    nlohmann::ordered_json meta;
    meta["kind"] = prior_mode ? "prior" : "diffusion";
    meta["unet"] = unet_config_meta(ucfg);
    meta["schedule"] = schedule_meta(cfg.T, cfg.beta_start, cfg.beta_end);
    meta["trained_steps"] = cfg.train_steps;
    meta["init_seed"] = init_seed;
    if (prior_mode) meta["prior_resolution"] = cfg.prior_resolution;
    save_checkpoint(out, net.params, &opt, meta);
    curve.write_csv((fs::path(out) / "loss.csv").string(), config_hash(cfg));
    DAG_CHECK(curve.decreased(), numeric,
              "training loss did not decrease (mean of last 10% of steps >= first 10%)");
    std::printf("trained %d steps, final loss %.5f -> %s\n", cfg.train_steps,
                curve.points.back().second, out.c_str());
}

void cmd_gen_dataset(const RunConfig& cfg, const std::string& out) {
    DAG_CHECK(cfg.dataset_n >= 1, config, "--n must be >= 1");
    SceneOptions opts;
    opts.min_boxes = cfg.scene_min_boxes;
    opts.max_boxes = cfg.scene_max_boxes;
    generate_dataset(out, cfg.dataset_n, cfg.seed, cfg.image_size, cfg.image_size,
                     cfg.dataset_labeled_fraction, opts);
    write_resolved_config(cfg, out);
    std::printf("wrote %d scenes (%dx%d) -> %s\n", cfg.dataset_n, cfg.image_size, cfg.image_size,
                out.c_str());
}

void cmd_train_depth(const RunConfig& cfg, const std::string& data_dir, const std::string& ckpt,
                     const std::string& out) {
    Dataset data = Dataset::load(data_dir);
    LoadedUNet denoiser = load_unet(ckpt);
    DAG_CHECK(denoiser.meta.value("kind", "") == "diffusion", config,
              "--diffusion-ckpt does not hold an image denoiser");
    DAG_CHECK(cfg.depth_labels <= static_cast<int>(data.index.labeled.size()), config,
              "--labels exceeds the dataset's labeled pool (" +
                  std::to_string(data.index.labeled.size()) + ")");

    std::vector<int64_t> labeled(data.index.labeled.begin(),
                                 data.index.labeled.begin() + cfg.depth_labels);
    std::vector<int> taps_s = cfg.taps_strong.empty() ? default_strong_taps(denoiser.cfg) : cfg.taps_strong;
    std::vector<int> taps_w = cfg.taps_weak.empty() ? default_weak_taps(denoiser.cfg) : cfg.taps_weak;

    uint64_t init_seed = cfg.seed ^ 0xdee9ull;
    Rng init(init_seed);
    DepthHeads heads(denoiser.cfg, taps_s, taps_w, cfg.time_embed_dim, init);

    DepthTrainConfig tc;
    tc.labeled_count = cfg.depth_labels;
    tc.lr = cfg.depth_lr;
    tc.steps = cfg.depth_steps;
    tc.batch = cfg.depth_batch;
    tc.t_max_train = cfg.t_max_train;
    TrainCurve curve = train_depth_heads(*denoiser.net, data, labeled, heads, denoiser.sched, tc,
                                         Rng(cfg.seed ^ 0x7dee9ull));

    write_resolved_config(cfg, out);
    nlohmann::ordered_json meta;
    meta["kind"] = "depth-heads";
    meta["taps_strong"] = taps_s;
    meta["taps_weak"] = taps_w;
    meta["time_embed_dim"] = cfg.time_embed_dim;
    meta["init_seed"] = init_seed;
    meta["labels"] = cfg.depth_labels;
    save_checkpoint(out, heads.params, nullptr, meta);
    {
        LossCurve lc;
        for (auto& [s, l] : curve.points) lc.points.emplace_back(s, l);
        lc.write_csv((fs::path(out) / "loss.csv").string(), config_hash(cfg));
    }

    // held-out accuracy table per timestep, plus a pred/gt container so
    // `eval --metrics delta,absrel` can re-score the predictions
    DAG_CHECK(!data.index.unlabeled.empty(), config, "dataset has no held-out split");
    std::vector<int> ts;
    for (int t = 0; t < std::min(cfg.t_max_train, denoiser.sched.T); t += 100) ts.push_back(t);
    Rng eval_root(cfg.seed ^ 0xe7a1ull);
    auto rows = accuracy_sweep(*denoiser.net, heads, data, data.index.unlabeled, ts, denoiser.sched,
                               eval_root);
    {
        std::ofstream f(fs::path(out) / "report.csv", std::ios::binary);
        if (!f) fail(ErrorKind::io, "cannot write report.csv");
        f << "# config-hash: " << config_hash(cfg) << "\n";
        f << "t,strong_delta125,weak_delta125\n";
        for (auto& r : rows) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f\n", r.t, r.strong, r.weak);
            f << buf;
        }
    }
    {
        int64_t n_eval = static_cast<int64_t>(data.index.unlabeled.size());
        Tensor preds = Tensor::zeros({n_eval, 1, data.images.dim(2), data.images.dim(3)});
        Tensor gts = Tensor::zeros({n_eval, 1, data.images.dim(2), data.images.dim(3)});
        int64_t hw = data.images.dim(2) * data.images.dim(3);
        parallel_for(n_eval, [&](int64_t i) {
            Tensor p = probe_depth(*denoiser.net, heads, true, data, data.index.unlabeled[i], 0,
                                   denoiser.sched, eval_root);
            std::copy(p.data(), p.data() + hw, preds.mutable_data() + i * hw);
            Tensor g = data.depth(data.index.unlabeled[i]);
            std::copy(g.data(), g.data() + hw, gts.mutable_data() + i * hw);
        });
        TensorContainer c;
        c.add("sample_depths", preds);
        c.add("depths", gts);
        c.write((fs::path(out) / "eval_preds").string());
    }
    std::printf("trained depth heads (%d labels) -> %s\n", cfg.depth_labels, out.c_str());
    for (auto& r : rows)
        std::printf("  t=%d strong %.4f weak %.4f\n", r.t, r.strong, r.weak);
}

struct SampleArgs {
    std::string ckpt, depth_ckpt, prior_ckpt, out;
    int n = 4;
};

void cmd_sample(const RunConfig& cfg, const SampleArgs& a) {
    LoadedUNet denoiser = load_unet(a.ckpt);
    SamplerSetup setup;
    setup.denoiser = denoiser.net.get();
    setup.sched = &denoiser.sched;
    setup.image_size = cfg.image_size;
    setup.use_ddpm = cfg.sampler == "ddpm";
    DAG_CHECK(cfg.sampler == "ddim" || cfg.sampler == "ddpm", config,
              "--sampler must be ddim or ddpm");
    setup.steps = cfg.sample_steps;
    setup.eta = cfg.eta;
    setup.guidance.w_dc = cfg.w_dc;
    setup.guidance.w_dp = cfg.w_dp;
    setup.guidance.tau_max = cfg.tau_max;
    setup.guidance.prior_resolution = cfg.prior_resolution;
    setup.guidance.dcg_metric = dcg_metric_from_string(cfg.dcg_metric);

    LoadedHeads heads;
    LoadedUNet prior;
    DiffusionSchedule prior_sched;
    if (cfg.w_dp > 0.0f)
        DAG_CHECK(!a.prior_ckpt.empty(), config, "--wdp > 0 requires --prior-ckpt");
    if (cfg.w_dc > 0.0f || cfg.w_dp > 0.0f)
        DAG_CHECK(!a.depth_ckpt.empty(), config, "guidance requires --depth-ckpt");
    if (!a.depth_ckpt.empty()) {
        heads = load_heads(a.depth_ckpt, denoiser.cfg);
        setup.heads = heads.heads.get();
    }
    if (!a.prior_ckpt.empty()) {
        prior = load_unet(a.prior_ckpt);
        DAG_CHECK(prior.meta.value("kind", "") == "prior", config,
                  "--prior-ckpt does not hold a depth prior");
        prior_sched = prior.sched;
        setup.prior = prior.net.get();
        setup.prior_sched = &prior_sched;
        setup.guidance.prior_resolution = prior.meta.value("prior_resolution", cfg.prior_resolution);
    }

    SampleRun run = run_sampling(setup, a.n, cfg.seed);
    write_resolved_config(cfg, a.out);
    TensorContainer c;
    c.add("samples", run.samples);
    if (setup.heads) c.add("sample_depths", run.sample_depths);
    c.write(a.out);
    if (setup.heads) {
        std::ofstream f(fs::path(a.out) / "losses.csv", std::ios::binary);
        if (!f) fail(ErrorKind::io, "cannot write losses.csv");
        f << "# config-hash: " << config_hash(cfg) << "\n";
        f << "sample,l_dc,l_dp\n";
        for (int i = 0; i < a.n; ++i) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "%d,%.8g,%.8g\n", i, run.l_dc[i], run.l_dp[i]);
            f << buf;
        }
        std::printf("sampled %d images, mean l_dc %.5f mean l_dp %.5f -> %s\n", a.n,
                    run.mean_l_dc(), run.mean_l_dp(), a.out.c_str());
    } else {
        std::printf("sampled %d images -> %s\n", a.n, a.out.c_str());
    }
}

void cmd_eval(const RunConfig& cfg, const std::string& samples_dir, const std::string& ref_dir,
              const std::string& metrics_list, const std::string& out) {
    TensorContainer sc = TensorContainer::read(samples_dir);
    std::vector<std::string> metrics;
    {
        std::stringstream ss(metrics_list);
        std::string item;
        while (std::getline(ss, item, ',')) metrics.push_back(item);
    }
    DAG_CHECK(!metrics.empty(), config, "--metrics must name at least one of dfid,delta,absrel");

    auto depth_list_of = [](const Tensor& t) {
        std::vector<Tensor> v;
        for (int64_t i = 0; i < t.dim(0); ++i) v.push_back(Dataset::slice_sample(t, i));
        return v;
    };

    std::vector<std::pair<std::string, double>> results;
    for (const std::string& m : metrics) {
        if (m == "dfid") {
            DAG_CHECK(!ref_dir.empty(), config, "dfid requires --ref-data");
            const Tensor* pred = sc.find("sample_depths");
            if (!pred) pred = sc.find("depths");
            DAG_CHECK(pred, config, "samples container has no sample_depths/depths tensor");
            Dataset ref = Dataset::load(ref_dir);
            results.emplace_back("dfid", dfid(depth_list_of(*pred), reference_depths(ref)));
        } else if (m == "delta" || m == "absrel") {
            const Tensor* pred = sc.find("sample_depths");
            const Tensor* gt = sc.find("depths");
            DAG_CHECK(pred && gt, config,
                      m + " needs paired sample_depths and depths tensors in --samples (as "
                          "written by train-depth's eval_preds)");
            double acc = 0.0;
            for (int64_t i = 0; i < pred->dim(0); ++i) {
                Tensor p = Dataset::slice_sample(*pred, i);
                Tensor g = Dataset::slice_sample(*gt, i);
                acc += m == "delta" ? depth_accuracy(p, g) : abs_rel(p, g);
            }
            results.emplace_back(m, acc / pred->dim(0));
        } else {
            fail(ErrorKind::config, "unknown metric: " + m);
        }
    }
    write_resolved_config(cfg, out);
    std::ofstream f(fs::path(out) / "report.csv", std::ios::binary);
    if (!f) fail(ErrorKind::io, "cannot write report.csv");
    f << "# config-hash: " << config_hash(cfg) << "\n";
    f << "metric,value\n";
    for (auto& [m, v] : results) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%s,%.8g\n", m.c_str(), v);
        f << buf;
        std::printf("%s = %.6g\n", m.c_str(), v);
    }
}

struct SweepArgs {
    std::string mode = "dcg";
    std::string scales = "0,10,20,40,80";
    std::string ckpt, depth_ckpt, prior_ckpts, ref_dir, out;
    int n = 128;
    std::optional<int> steps;
};

void cmd_sweep(const RunConfig& cfg, const SweepArgs& a) {
    LoadedUNet denoiser = load_unet(a.ckpt);
    LoadedHeads heads = load_heads(a.depth_ckpt, denoiser.cfg);

    SamplerSetup setup;
    setup.denoiser = denoiser.net.get();
    setup.heads = heads.heads.get();
    setup.sched = &denoiser.sched;
    setup.image_size = cfg.image_size;
    setup.use_ddpm = cfg.sampler == "ddpm";
    setup.steps = cfg.sample_steps;
    setup.eta = cfg.eta;
    setup.guidance.tau_max = cfg.tau_max;
    setup.guidance.dcg_metric = dcg_metric_from_string(cfg.dcg_metric);
    setup.guidance.prior_resolution = cfg.prior_resolution;

    Dataset ref = Dataset::load(a.ref_dir);
    std::vector<Tensor> refs = reference_depths(ref);

    auto split_list = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(item);
        return out;
    };

    std::vector<SweepRow> rows;
    if (a.mode == "dcg" || a.mode == "dpg") {
        std::vector<float> scales;
        for (auto& s : split_list(a.scales)) scales.push_back(std::stof(s));
        DAG_CHECK(!scales.empty(), config, "--scales must be non-empty");
        LoadedUNet prior;
        DiffusionSchedule prior_sched;
        if (a.mode == "dpg") {
            DAG_CHECK(!a.prior_ckpts.empty(), config, "dpg sweep requires --prior-ckpt");
            prior = load_unet(a.prior_ckpts);
            prior_sched = prior.sched;
            setup.prior = prior.net.get();
            setup.prior_sched = &prior_sched;
            setup.guidance.prior_resolution = prior.meta.value("prior_resolution", cfg.prior_resolution);
        }
        rows = scale_sweep(setup, a.mode, scales, a.n, cfg.seed, refs);
    } else if (a.mode == "prior-res") {
        // resolution ablation: one row per prior checkpoint at the configured w_dp
        std::vector<std::string> dirs = split_list(a.prior_ckpts);
        DAG_CHECK(!dirs.empty(), config, "prior-res sweep requires --prior-ckpt dir[,dir...]");
        for (const std::string& dir : dirs) {
            LoadedUNet prior = load_unet(dir);
            DiffusionSchedule prior_sched = prior.sched;
            setup.prior = prior.net.get();
            setup.prior_sched = &prior_sched;
            setup.guidance.prior_resolution = prior.meta.value("prior_resolution", cfg.prior_resolution);
            setup.guidance.w_dc = 0.0f;
            setup.guidance.w_dp = cfg.w_dp;
            SampleRun run = run_sampling(setup, a.n, cfg.seed);
            SweepRow r;
            r.mode = "prior-res";
            r.scale = cfg.w_dp;
            r.prior_resolution = setup.guidance.prior_resolution;
            r.dfid_value = dfid(run.depth_list(), refs);
            r.mean_l_dc = run.mean_l_dc();
            r.mean_l_dp = run.mean_l_dp();
            rows.push_back(r);
        }
    } else {
        fail(ErrorKind::config, "--mode must be dcg, dpg or prior-res");
    }

    write_resolved_config(cfg, a.out);
    write_sweep_csv((fs::path(a.out) / "sweep.csv").string(), rows, config_hash(cfg));
    for (auto& r : rows)
        std::printf("%s scale %.3g res %d: dfid %.5f l_dc %.5f l_dp %.5f\n", r.mode.c_str(), r.scale,
                    r.prior_resolution, r.dfid_value, r.mean_l_dc, r.mean_l_dp);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"depth-aware guided diffusion, self-contained CPU engine"};
    app.set_version_flag("--version", version());
    app.require_subcommand(1);

    // gen-dataset
    auto* gen = app.add_subcommand("gen-dataset", "generate synthetic depth-labeled scenes");
    Common gen_common;
    gen_common.attach(gen);
    struct {
        std::optional<int> n;
        std::optional<int> size;
        std::optional<double> labeled_frac;
        std::string out;
    } gen_args;
    gen->add_option("--n", gen_args.n, "number of scenes");
    gen->add_option("--size", gen_args.size, "image side length");
    gen->add_option("--labeled-frac", gen_args.labeled_frac, "fraction in the labeled split");
    gen->add_option("--out", gen_args.out, "output container directory")->required();

    // train-diffusion / train-prior
    auto* td = app.add_subcommand("train-diffusion", "train the image denoiser");
    Common td_common;
    td_common.attach(td);
    struct {
        std::string data, out, resume;
        std::optional<int> steps, batch;
        std::optional<float> lr;
    } td_args;
    td->add_option("--data", td_args.data, "dataset directory")->required();
    td->add_option("--out", td_args.out, "checkpoint output directory")->required();
    td->add_option("--steps", td_args.steps, "training steps");
    td->add_option("--batch", td_args.batch, "batch size");
    td->add_option("--lr", td_args.lr, "Adam learning rate");
    td->add_option("--resume", td_args.resume, "checkpoint to continue from");

    auto* tp = app.add_subcommand("train-prior", "train the depth-domain prior");
    Common tp_common;
    tp_common.attach(tp);
    struct {
        std::string data, out, resume;
        std::optional<int> steps, batch, prior_res;
        std::optional<float> lr;
    } tp_args;
    tp->add_option("--data", tp_args.data, "dataset directory (consumes the depths tensor)")->required();
    tp->add_option("--out", tp_args.out, "checkpoint output directory")->required();
    tp->add_option("--steps", tp_args.steps, "training steps");
    tp->add_option("--batch", tp_args.batch, "batch size");
    tp->add_option("--lr", tp_args.lr, "Adam learning rate");
    tp->add_option("--prior-res", tp_args.prior_res, "prior operating resolution");
    tp->add_option("--resume", tp_args.resume, "checkpoint to continue from");

    // train-depth
    auto* tdep = app.add_subcommand("train-depth", "train depth heads on frozen denoiser features");
    Common tdep_common;
    tdep_common.attach(tdep);
    struct {
        std::string data, ckpt, out;
        std::optional<int> labels, steps, batch;
        std::optional<float> lr;
    } tdep_args;
    tdep->add_option("--data", tdep_args.data, "dataset directory")->required();
    tdep->add_option("--diffusion-ckpt", tdep_args.ckpt, "trained denoiser checkpoint")->required();
    tdep->add_option("--out", tdep_args.out, "output directory")->required();
    tdep->add_option("--labels", tdep_args.labels, "labeled scene count");
    tdep->add_option("--steps", tdep_args.steps, "training steps");
    tdep->add_option("--batch", tdep_args.batch, "images per step");
    tdep->add_option("--lr", tdep_args.lr, "Adam learning rate");

    // sample
    auto* smp = app.add_subcommand("sample", "sample images, optionally depth-guided");
    Common smp_common;
    smp_common.attach(smp);
    SampleArgs smp_args;
    struct {
        std::optional<int> steps;
        std::optional<float> wdc, wdp, eta;
        std::optional<std::string> sampler, dcg_metric;
    } smp_extra;
    smp->add_option("--ckpt", smp_args.ckpt, "denoiser checkpoint")->required();
    smp->add_option("--depth-ckpt", smp_args.depth_ckpt, "depth-heads checkpoint");
    smp->add_option("--prior-ckpt", smp_args.prior_ckpt, "depth prior checkpoint");
    smp->add_option("--n", smp_args.n, "number of samples");
    smp->add_option("--out", smp_args.out, "output container directory")->required();
    smp->add_option("--steps", smp_extra.steps, "sampler steps (DDIM)");
    smp->add_option("--sampler", smp_extra.sampler, "ddim or ddpm");
    smp->add_option("--wdc", smp_extra.wdc, "depth consistency guidance scale");
    smp->add_option("--wdp", smp_extra.wdp, "depth prior guidance scale");
    smp->add_option("--eta", smp_extra.eta, "DDIM eta");
    smp->add_option("--dcg-metric", smp_extra.dcg_metric, "l1 or l2");

    // eval
    auto* ev = app.add_subcommand("eval", "compute dFID / delta / AbsRel reports");
    Common ev_common;
    ev_common.attach(ev);
    struct {
        std::string samples, ref, metrics = "dfid", out;
    } ev_args;
    ev->add_option("--samples", ev_args.samples, "samples container directory")->required();
    ev->add_option("--ref-data", ev_args.ref, "reference dataset directory");
    ev->add_option("--metrics", ev_args.metrics, "comma list: dfid,delta,absrel");
    ev->add_option("--out", ev_args.out, "report output directory")->required();

    // sweep
    auto* sw = app.add_subcommand("sweep", "guidance-scale or prior-resolution sweeps");
    Common sw_common;
    sw_common.attach(sw);
    SweepArgs sw_args;
    sw->add_option("--mode", sw_args.mode, "dcg, dpg or prior-res");
    sw->add_option("--scales", sw_args.scales, "comma list of guidance scales");
    sw->add_option("--ckpt", sw_args.ckpt, "denoiser checkpoint")->required();
    sw->add_option("--depth-ckpt", sw_args.depth_ckpt, "depth-heads checkpoint")->required();
    sw->add_option("--prior-ckpt", sw_args.prior_ckpts, "prior checkpoint(s), comma list for prior-res");
    sw->add_option("--ref-data", sw_args.ref_dir, "reference dataset directory")->required();
    sw->add_option("--n", sw_args.n, "samples per row");
    sw->add_option("--steps", sw_args.steps, "sampler steps (DDIM)");
    sw->add_option("--out", sw_args.out, "report output directory")->required();

    try {
        app.parse(argc, argv);

        if (gen->parsed()) {
            RunConfig cfg = gen_common.resolve();
            if (gen_args.n) cfg.dataset_n = *gen_args.n;
            if (gen_args.size) cfg.image_size = *gen_args.size;
            if (gen_args.labeled_frac) cfg.dataset_labeled_fraction = *gen_args.labeled_frac;
            if (begin(gen_common, cfg)) cmd_gen_dataset(cfg, gen_args.out);
        } else if (td->parsed()) {
            RunConfig cfg = td_common.resolve();
            if (td_args.steps) cfg.train_steps = *td_args.steps;
            if (td_args.batch) cfg.train_batch = *td_args.batch;
            if (td_args.lr) cfg.train_lr = *td_args.lr;
            if (begin(td_common, cfg)) run_training(cfg, td_args.data, td_args.out, td_args.resume, false);
        } else if (tp->parsed()) {
            RunConfig cfg = tp_common.resolve();
            if (tp_args.steps) cfg.train_steps = *tp_args.steps;
            if (tp_args.batch) cfg.train_batch = *tp_args.batch;
            if (tp_args.lr) cfg.train_lr = *tp_args.lr;
            if (tp_args.prior_res) cfg.prior_resolution = *tp_args.prior_res;
            if (begin(tp_common, cfg)) run_training(cfg, tp_args.data, tp_args.out, tp_args.resume, true);
        } else if (tdep->parsed()) {
            RunConfig cfg = tdep_common.resolve();
            if (tdep_args.labels) cfg.depth_labels = *tdep_args.labels;
            if (tdep_args.steps) cfg.depth_steps = *tdep_args.steps;
            if (tdep_args.batch) cfg.depth_batch = *tdep_args.batch;
            if (tdep_args.lr) cfg.depth_lr = *tdep_args.lr;
            if (begin(tdep_common, cfg))
                cmd_train_depth(cfg, tdep_args.data, tdep_args.ckpt, tdep_args.out);
        } else if (smp->parsed()) {
            RunConfig cfg = smp_common.resolve();
            if (smp_extra.steps) cfg.sample_steps = *smp_extra.steps;
            if (smp_extra.sampler) cfg.sampler = *smp_extra.sampler;
            if (smp_extra.wdc) cfg.w_dc = *smp_extra.wdc;
            if (smp_extra.wdp) cfg.w_dp = *smp_extra.wdp;
            if (smp_extra.eta) cfg.eta = *smp_extra.eta;
            if (smp_extra.dcg_metric) cfg.dcg_metric = *smp_extra.dcg_metric;
            if (begin(smp_common, cfg)) cmd_sample(cfg, smp_args);
        } else if (ev->parsed()) {
            RunConfig cfg = ev_common.resolve();
            if (begin(ev_common, cfg)) cmd_eval(cfg, ev_args.samples, ev_args.ref, ev_args.metrics, ev_args.out);
        } else if (sw->parsed()) {
            RunConfig cfg = sw_common.resolve();
            if (sw_args.steps) cfg.sample_steps = *sw_args.steps;
            if (begin(sw_common, cfg)) cmd_sweep(cfg, sw_args);
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code(e.kind);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
