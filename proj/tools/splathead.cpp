// splathead: command line front end over the library. Subcommands cover the
// whole pipeline: gen (synthetic dataset), track (pose recovery), train
// (deformable head), render, adapt (blendshape VQ), restore (torso
// compositing) and bench (rasterizer timing).
//
// Exit codes: 0 success, 2 invalid input, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "splat/head_sync.hpp"
#include "splat/synthetic.hpp"
#include "splat/torso.hpp"
#include "splat/trainer.hpp"
#include "splat/vq.hpp"

namespace fs = std::filesystem;
using namespace splat;

namespace {

io::Config load_config(const std::string& path) {
    if (path.empty()) return {};
    return io::read_config(path);
}

std::string frame_name(std::size_t t, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04zu.%s", t, ext);
    return buf;
}

Image load_image(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".ppm") return read_ppm(path);
    return read_image_f64(path);
}

CameraModel cam_from_section(const Tensor& c) {
    if (c.numel() != 5) throw ValidationError("scene.cam section must hold 5 values");
    CameraModel cam;
    cam.f = c.data[0];
    cam.principal = Vec2(c.data[1], c.data[2]);
    cam.width = std::size_t(c.data[3]);
    cam.height = std::size_t(c.data[4]);
    cam.validate();
    return cam;
}

std::vector<GaussianPrimitive> scene_from_sections(const std::map<std::string, Tensor>& sec) {
    return attrs_to_scene(sec.at("scene.mu"), sec.at("scene.r"), sec.at("scene.s"),
                          sec.at("scene.alpha"), sec.at("scene.sh"));
}

int cmd_gen(const std::string& cfg_path, const std::string& out, long seed_override) {
    io::Config cfg = load_config(cfg_path);
    SyntheticSceneSpec spec;
    spec.n_primitives = std::size_t(cfg.get_int("primitives", long(spec.n_primitives)));
    spec.frames = std::size_t(cfg.get_int("frames", long(spec.frames)));
    spec.width = std::size_t(cfg.get_int("width", long(spec.width)));
    spec.height = std::size_t(cfg.get_int("height", long(spec.height)));
    spec.focal = cfg.get_double("focal", spec.focal);
    spec.fl_dim = std::size_t(cfg.get_int("fl_dim", long(spec.fl_dim)));
    spec.fe_dim = std::size_t(cfg.get_int("fe_dim", long(spec.fe_dim)));
    spec.deform_amp = cfg.get_double("deform_amp", spec.deform_amp);
    spec.pose_amp = cfg.get_double("pose_amp", spec.pose_amp);
    spec.n_landmarks = std::size_t(cfg.get_int("landmarks", long(spec.n_landmarks)));
    spec.seed = std::uint64_t(cfg.get_int("seed", long(spec.seed)));
    if (seed_override >= 0) spec.seed = std::uint64_t(seed_override);

    SyntheticDataset ds = gen_head_dataset(spec);
    std::string manifest = write_dataset(out, ds);
    std::cout << "wrote " << manifest << " (" << ds.samples.size() << " frames)\n";
    return 0;
}

int cmd_track(const std::string& cfg_path, const std::string& data, const std::string& out,
              const std::string& keypoints_path, long seed_override) {
    io::Config cfg = load_config(cfg_path);
    fs::create_directories(out);

    auto sections = io::read_checkpoint((fs::path(data) / "scene_gt.spck").string());
    MorphableBasis basis;
    basis.mean = sections.at("basis.mean");
    basis.id_basis = sections.at("basis.id");
    basis.exp_basis = sections.at("basis.exp");
    for (std::size_t j = 0; j < basis.n_vertices(); ++j) basis.landmark_indices.push_back(j);
    basis.validate();
    Tensor a_id = sections.at("basis.a_id");
    CameraModel cam = cam_from_section(sections.at("scene.cam"));

    std::string lm_path = keypoints_path.empty()
                              ? (fs::path(data) / "landmarks.csv").string()
                              : keypoints_path;
    io::LandmarkTrack track = io::read_landmarks_csv(lm_path);

    PoseFitConfig fit_cfg;
    fit_cfg.iters = int(cfg.get_int("pose_iters", fit_cfg.iters));
    fit_cfg.principal = cam.principal;

    double guess = cfg.get_double("focal_guess", cam.f);
    std::vector<double> candidates;
    for (double m : {0.5, 0.75, 1.0, 1.25, 1.5}) candidates.push_back(m * guess);
    auto focal = search_focal(track, basis, a_id, candidates, fit_cfg);
    std::cout << "focal search: f = " << focal.f_opt << "\n";

    std::vector<io::PoseRecord> init;
    for (const auto& frame : track.frames)
        init.push_back(init_pose_guess(basis, a_id, frame, focal.f_opt, cam.principal));
    auto fits = refine_pose(track, basis, a_id, focal.f_opt, init, fit_cfg);

    // Flow-based keypoint report (selection statistics only; the bundle runs
    // on the landmark track).
    std::string flow_path = (fs::path(data) / "flow.sflo").string();
    if (fs::exists(flow_path)) {
        io::FlowField flow = io::read_sflo(flow_path);
        std::ofstream stats((fs::path(out) / "keypoint_stats.csv").string());
        stats << "frame,theta,selected\n";
        for (std::size_t t = 0; t < flow.frames.size(); ++t) {
            double theta = adaptive_flow_threshold(flow.frames[t], flow.width, flow.height);
            auto keys = select_keypoints(flow.frames[t], flow.width, flow.height, theta);
            stats << t << "," << theta << "," << keys.size() << "\n";
        }
    }

    BundleConfig bcfg;
    bcfg.f = focal.f_opt;
    bcfg.principal = cam.principal;
    bcfg.stage1_iters = int(cfg.get_int("ba_stage1_iters", bcfg.stage1_iters));
    bcfg.stage2_iters = int(cfg.get_int("ba_stage2_iters", bcfg.stage2_iters));
    bcfg.seed = seed_override >= 0 ? std::uint64_t(seed_override)
                                   : std::uint64_t(cfg.get_int("seed", 1));
    std::vector<io::PoseRecord> refined;
    for (const auto& f : fits) refined.push_back(f.pose);
    auto bundle = bundle_adjust(track, refined, bcfg);

    int window = int(cfg.get_int("smooth_window", 3));
    auto smoothed = smooth_poses(bundle.poses, window);

    io::atomic_write((fs::path(out) / "poses.csv").string(),
                     [&](const std::string& p) { io::write_pose_csv(p, smoothed); });
    std::ofstream res((fs::path(out) / "residuals.csv").string());
    res << "iter,residual\n";
    res.precision(17);
    for (std::size_t i = 0; i < bundle.residual_trace.size(); ++i)
        res << i << "," << bundle.residual_trace[i] << "\n";
    std::cout << "bundle residual: stage1 " << bundle.stage1_residual << " stage2 "
              << bundle.stage2_residual << "\n";
    return 0;
}

std::vector<FrameSample> load_training_set(const std::string& data, const CameraModel& cam) {
    io::FeatureTrack fl = io::read_sftf((fs::path(data) / "features_lip.sftf").string());
    io::FeatureTrack fe = io::read_sftf((fs::path(data) / "features_exp.sftf").string());
    auto poses = io::read_pose_csv((fs::path(data) / "poses.csv").string());
    if (fl.frames.size() != poses.size() || fe.frames.size() != poses.size())
        throw ValidationError("dataset: feature and pose track lengths disagree");
    std::vector<FrameSample> set;
    for (std::size_t t = 0; t < poses.size(); ++t) {
        FrameSample s;
        s.target = read_image_f64((fs::path(data) / frame_name(t, "simg")).string());
        s.cam = cam;
        s.input.f_l = fl.frames[t];
        s.input.f_e = fe.frames[t];
        s.input.R = poses[t].q;
        s.input.T = poses[t].t;
        s.index = t;
        set.push_back(std::move(s));
    }
    return set;
}

int cmd_train(const std::string& cfg_path, const std::string& data, const std::string& out,
              long seed_override) {
    io::Config cfg = load_config(cfg_path);
    fs::create_directories(out);
    auto sections = io::read_checkpoint((fs::path(data) / "scene_gt.spck").string());
    CameraModel cam = cam_from_section(sections.at("scene.cam"));
    auto set = load_training_set(data, cam);

    DeformModelConfig mcfg;
    mcfg.anchors = std::size_t(cfg.get_int("anchors", 400));
    mcfg.triplane.base_res = std::size_t(cfg.get_int("base_res", 16));
    mcfg.triplane.levels = std::size_t(cfg.get_int("levels", long(mcfg.triplane.levels)));
    mcfg.triplane.dim = std::size_t(cfg.get_int("dim", long(mcfg.triplane.dim)));
    mcfg.mlp_width = std::size_t(cfg.get_int("mlp_width", 64));
    mcfg.sh_degree = int(cfg.get_int("sh_degree", 1));
    mcfg.fl_dim = set.front().input.f_l.size();
    mcfg.fe_dim = set.front().input.f_e.size();
    mcfg.strategy = parse_strategy(cfg.get_str("strategy", "SH,alpha"));

    TrainingConfig tcfg;
    tcfg.stage1_steps = std::size_t(cfg.get_int("stage1_steps", 400));
    tcfg.stage2_steps = std::size_t(cfg.get_int("stage2_steps", 400));
    tcfg.adam.lr = cfg.get_double("lr", tcfg.adam.lr);
    tcfg.lpips_stage2 = cfg.get_double("lpips_stage2", tcfg.lpips_stage2);
    tcfg.seed = seed_override >= 0 ? std::uint64_t(seed_override)
                                   : std::uint64_t(cfg.get_int("seed", 1));

    Rng rng(tcfg.seed);
    DeformModel model = DeformModel::init(mcfg, rng);
    TrainResult res = train_two_stage(set, std::move(model), tcfg);

    io::atomic_write((fs::path(out) / "model.spck").string(), [&](const std::string& p) {
        io::write_checkpoint(p, res.model.to_sections());
    });
    write_loss_log_csv((fs::path(out) / "loss_log.csv").string(), res.log);
    std::cout << "final loss: " << res.log.back().total << " over " << res.log.size()
              << " steps\n";
    return 0;
}

int cmd_render(const std::string& checkpoint, const std::string& data, const std::string& out,
               const std::string& poses_path) {
    fs::create_directories(out);
    auto sections = io::read_checkpoint(checkpoint);

    if (sections.count("scene.mu")) {
        // Explicit scene: pose every frame and rasterize directly. With the
        // poses that produced a generated dataset this reproduces its frames
        // bit for bit.
        auto scene = scene_from_sections(sections);
        CameraModel cam = cam_from_section(sections.at("scene.cam"));
        if (poses_path.empty()) throw ValidationError("render: explicit scene needs --poses");
        auto poses = io::read_pose_csv(poses_path);
        RenderTarget target{cam.width, cam.height, {0, 0, 0}};
        for (std::size_t t = 0; t < poses.size(); ++t) {
            Image img = rasterize(apply_pose(scene, poses[t]), cam, target);
            write_image_f64((fs::path(out) / frame_name(t, "simg")).string(), img);
            write_ppm((fs::path(out) / frame_name(t, "ppm")).string(), img);
        }
        std::cout << "rendered " << poses.size() << " frames\n";
        return 0;
    }

    if (data.empty()) throw ValidationError("render: model checkpoint needs --data");
    DeformModel model = DeformModel::from_sections(sections);
    auto gt = io::read_checkpoint((fs::path(data) / "scene_gt.spck").string());
    CameraModel cam = cam_from_section(gt.at("scene.cam"));
    auto set = load_training_set(data, cam);
    for (const auto& frame : set) {
        Image img = render_frame(model, frame);
        write_image_f64((fs::path(out) / frame_name(frame.index, "simg")).string(), img);
        write_ppm((fs::path(out) / frame_name(frame.index, "ppm")).string(), img);
    }
    std::cout << "rendered " << set.size() << " frames\n";
    return 0;
}

int cmd_adapt(const std::string& cfg_path, const std::string& in, const std::string& out,
              const std::string& model_path, long seed_override) {
    io::Config cfg = load_config(cfg_path);
    fs::create_directories(out);
    auto track = io::read_blendshapes_csv(in);

    VqModel model;
    if (!model_path.empty()) {
        model = VqModel::from_sections(io::read_checkpoint(model_path));
    } else {
        VqConfig vcfg;
        vcfg.epochs = std::size_t(cfg.get_int("epochs", long(vcfg.epochs)));
        vcfg.codebook_size = std::size_t(cfg.get_int("codebook", long(vcfg.codebook_size)));
        vcfg.window = std::size_t(cfg.get_int("window", long(vcfg.window)));
        vcfg.lr = cfg.get_double("lr", vcfg.lr);
        vcfg.seed = seed_override >= 0 ? std::uint64_t(seed_override)
                                       : std::uint64_t(cfg.get_int("seed", 1));
        model = VqModel::init(vcfg);
        auto log = train_vq(model, track);
        std::ofstream f((fs::path(out) / "vq_loss.csv").string());
        f << "epoch,loss\n";
        f.precision(17);
        for (std::size_t e = 0; e < log.epoch_loss.size(); ++e)
            f << e << "," << log.epoch_loss[e] << "\n";
        io::atomic_write((fs::path(out) / "vq.spck").string(), [&](const std::string& p) {
            io::write_checkpoint(p, model.to_sections());
        });
    }

    auto adapted = adapt_ood(track, model);
    io::atomic_write((fs::path(out) / "adapted.csv").string(), [&](const std::string& p) {
        io::write_blendshapes_csv(p, adapted);
    });
    std::cout << "adapted " << adapted.size() << " frames\n";
    return 0;
}

int cmd_restore(const std::string& cfg_path, const std::string& render_path,
                const std::string& frame_path, const std::string& mask_path,
                const std::string& model_path, const std::string& out) {
    io::Config cfg = load_config(cfg_path);
    Image f_r = load_image(render_path);
    Image f_o = load_image(frame_path);
    Mask m = read_pgm(mask_path);
    double sigma = cfg.get_double("sigma", 1.5);
    double delta = cfg.get_double("expansion", kInferenceExpansionPx);

    InpaintNet net;
    const InpaintNet* net_ptr = nullptr;
    if (!model_path.empty()) {
        auto sections = io::read_checkpoint(model_path);
        for (auto& [k, v] : sections) net.params.set(k, v);
        net_ptr = &net;
    }
    Image result = composite_portrait(f_r, f_o, m, sigma, delta, net_ptr);
    if (out.size() >= 4 && out.substr(out.size() - 4) == ".ppm")
        write_ppm(out, result);
    else
        write_image_f64(out, result);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_bench(const std::string& cfg_path, const std::string& out,
              const std::string& baseline) {
    io::Config cfg = load_config(cfg_path);
    std::size_t w = std::size_t(cfg.get_int("width", 64));
    std::size_t h = std::size_t(cfg.get_int("height", 64));
    std::size_t n = std::size_t(cfg.get_int("splats", 2000));
    std::size_t repeats = std::size_t(cfg.get_int("repeats", 10));

    SyntheticSceneSpec spec;
    spec.n_primitives = n;
    spec.frames = 1;
    spec.width = w;
    spec.height = h;
    SyntheticDataset ds = gen_head_dataset(spec);
    const auto& scene = ds.frame_scenes[0];
    RenderTarget target{w, h, {0, 0, 0}};

    auto time_impl = [&](auto&& fn) {
        fn();  // warm-up
        auto t0 = std::chrono::steady_clock::now();
        for (std::size_t i = 0; i < repeats; ++i) fn();
        auto t1 = std::chrono::steady_clock::now();
        return std::chrono::duration<double>(t1 - t0).count() / double(repeats);
    };
    double tiled = time_impl([&] { rasterize(scene, ds.cam, target); });
    double naive = time_impl([&] { rasterize_naive_oracle(scene, ds.cam, target); });

    std::ostringstream csv;
    csv << "impl,width,height,splats,repeats,seconds,fps\n";
    csv.precision(17);
    csv << "tiled," << w << "," << h << "," << n << "," << repeats << "," << tiled << ","
        << 1.0 / tiled << "\n";
    csv << "naive," << w << "," << h << "," << n << "," << repeats << "," << naive << ","
        << 1.0 / naive << "\n";
    std::cout << csv.str();
    if (!out.empty()) {
        std::ofstream f(out);
        f << csv.str();
    }

    if (!baseline.empty()) {
        std::ifstream f(baseline);
        if (!f) throw ValidationError("cannot open baseline: " + baseline);
        std::string line;
        double base_fps = -1;
        while (std::getline(f, line)) {
            if (line.rfind("tiled,", 0) != 0) continue;
            auto pos = line.rfind(',');
            base_fps = std::stod(line.substr(pos + 1));
        }
        if (base_fps <= 0) throw ValidationError("baseline has no tiled fps row");
        double fps = 1.0 / tiled;
        if (fps < 0.8 * base_fps) {
            std::cerr << "regression: " << fps << " fps vs baseline " << base_fps << "\n";
            return 1;
        }
        std::cout << "within 20% of baseline (" << fps << " vs " << base_fps << " fps)\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale talking-head pipeline"};
    app.require_subcommand(1);

    std::string config, out, data, checkpoint, poses, keypoints, in, model_path;
    std::string render_path, frame_path, mask_path, baseline;
    long seed = -1;

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    gen->add_option("--config", config);
    gen->add_option("--out", out)->required();
    gen->add_option("--seed", seed);

    auto* track = app.add_subcommand("track", "recover head poses from landmarks");
    track->add_option("--config", config);
    track->add_option("--data", data)->required();
    track->add_option("--out", out)->required();
    track->add_option("--keypoints", keypoints);
    track->add_option("--seed", seed);

    auto* train = app.add_subcommand("train", "fit the deformable head model");
    train->add_option("--config", config);
    train->add_option("--data", data)->required();
    train->add_option("--out", out)->required();
    train->add_option("--seed", seed);

    auto* render = app.add_subcommand("render", "render a checkpoint");
    render->add_option("--checkpoint", checkpoint)->required();
    render->add_option("--data", data);
    render->add_option("--poses", poses);
    render->add_option("--out", out)->required();

    auto* adapt = app.add_subcommand("adapt", "VQ-adapt a blendshape track");
    adapt->add_option("--config", config);
    adapt->add_option("--in", in)->required();
    adapt->add_option("--out", out)->required();
    adapt->add_option("--model", model_path);
    adapt->add_option("--seed", seed);

    auto* restore = app.add_subcommand("restore", "composite a rendered head onto a frame");
    restore->add_option("--config", config);
    restore->add_option("--render", render_path)->required();
    restore->add_option("--frame", frame_path)->required();
    restore->add_option("--mask", mask_path)->required();
    restore->add_option("--model", model_path);
    restore->add_option("--out", out)->required();

    auto* bench = app.add_subcommand("bench", "time the rasterizer implementations");
    bench->add_option("--config", config);
    bench->add_option("--out", out);
    bench->add_option("--baseline", baseline);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(config, out, seed);
        if (track->parsed()) return cmd_track(config, data, out, keypoints, seed);
        if (train->parsed()) return cmd_train(config, data, out, seed);
        if (render->parsed()) return cmd_render(checkpoint, data, out, poses);
        if (adapt->parsed()) return cmd_adapt(config, in, out, model_path, seed);
        if (restore->parsed())
            return cmd_restore(config, render_path, frame_path, mask_path, model_path, out);
        if (bench->parsed()) return cmd_bench(config, out, baseline);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
