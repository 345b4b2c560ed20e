// losf: surface reconstruction from point clouds via learned local UDFs.
//
// Subcommands: gen-data, train, reconstruct, eval, corrupt.
// Exit codes: 0 success, 2 usage/config error, 3 empty-result domain error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "losf/cloud.hpp"
#include "losf/config.hpp"
#include "losf/evalkit.hpp"
#include "losf/meshing.hpp"
#include "losf/model.hpp"
#include "losf/patchgen.hpp"
#include "losf/query.hpp"
#include "losf/spatial.hpp"
#include "losf/trainer.hpp"

namespace {

struct EmptyResult : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int env_threads() {
    const char* env = std::getenv("LOSF_THREADS");
    if (!env) return 1;
    int v = std::atoi(env);
    return v >= 1 ? v : 1;
}

void warn_unknown_keys(const losf::KeyValueConfig& cfg) {
    for (const auto& key : cfg.unknown_keys())
        std::cerr << "warning: " << cfg.origin() << ": unknown config key '" << key << "'\n";
}

// ---------------------------------------------------------------------------

struct GenArgs {
    std::string config_path, out_path;
    std::int64_t seed = -1, count = -1;
};

int run_gen_data(const GenArgs& args) {
    losf::KeyValueConfig file_cfg;
    if (!args.config_path.empty()) file_cfg = losf::KeyValueConfig::parse_file(args.config_path);
    losf::GenConfig cfg = losf::GenConfig::from_config(file_cfg);
    warn_unknown_keys(file_cfg);
    if (args.seed >= 0) cfg.seed = std::uint64_t(args.seed);
    if (args.count >= 0) cfg.count = std::uint64_t(args.count);
    cfg.validate();

    losf::GenStats stats;
    std::vector<losf::PatchSample> samples = losf::generate_dataset(cfg, stats);
    losf::write_dataset(args.out_path, samples);

    std::cout << "samples: " << stats.accepted << "\n";
    std::cout << "rejection rate: " << stats.rejection_rate() << " (" << stats.rejected
              << " rejected draws)\n";
    std::cout << "family histogram:";
    for (int f = 0; f < losf::kFamilyCount; ++f)
        std::cout << ' ' << losf::family_name(losf::ShapeFamily(f)) << '='
                  << stats.family_histogram[f];
    std::cout << "\nwrote " << args.out_path << " ("
              << std::filesystem::file_size(args.out_path) << " bytes)\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data_path, out_path, config_path, log_path;
    std::int64_t seed = -1, epochs = -1, batch = -1;
    double lr = -1.0, val_split = -1.0;
    int threads = 0;
};

int run_train(const TrainArgs& args) {
    losf::KeyValueConfig file_cfg;
    if (!args.config_path.empty()) file_cfg = losf::KeyValueConfig::parse_file(args.config_path);
    losf::TrainConfig cfg = losf::TrainConfig::from_config(file_cfg);
    warn_unknown_keys(file_cfg);
    if (args.seed >= 0) cfg.seed = std::uint64_t(args.seed);
    if (args.epochs >= 0) cfg.epochs = std::int32_t(args.epochs);
    if (args.batch >= 0) cfg.batch_size = std::int32_t(args.batch);
    if (args.lr > 0.0) cfg.lr = float(args.lr);
    float val_split = args.val_split > 0.0 ? float(args.val_split) : cfg.val_split;
    cfg.threads = args.threads > 0 ? args.threads : env_threads();
    cfg.validate();

    losf::DatasetHeader header;
    std::vector<losf::PatchSample> samples = losf::read_dataset(args.data_path, &header);
    std::cerr << "loaded " << samples.size() << " samples (m=" << header.m << ") from "
              << args.data_path << "\n";

    losf::ModelConfig mc;
    mc.m = header.m;
    losf::ModelParams<float> params(mc);
    params.init(cfg.seed);

    losf::TrainResult result = losf::train<float>(
        params, samples, val_split, cfg, [](const losf::TrainLogRow& row) {
            std::cerr << "epoch " << row.epoch << ": train_loss=" << row.train_loss
                      << " val_mae=" << row.val_mae << " (" << row.seconds << " s)\n";
        });

    losf::save_checkpoint(args.out_path, params);
    std::string log_path = args.log_path.empty() ? args.out_path + ".log.csv" : args.log_path;
    std::ofstream log(log_path);
    if (!log) throw losf::ContractError("cannot open log for writing: " + log_path);
    result.log.to_csv(log);

    std::cout << "epochs: " << result.log.rows.size() << "\n";
    if (result.best_epoch >= 0)
        std::cout << "best epoch: " << result.best_epoch << " val_mae: " << result.best_val_mae
                  << "\n";
    std::cout << "checkpoint: " << args.out_path << " ("
              << std::filesystem::file_size(args.out_path) << " bytes)\nlog: " << log_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct ReconstructArgs {
    std::string model_path, cloud_path, out_path, grid_path;
    double radius = 0.018, iso = 0.005;
    int res = 128, project = 5, threads = 0;
};

int run_reconstruct(const ReconstructArgs& args) {
    if (args.res < 8) throw losf::ContractError("--res must be >= 8");
    if (!(args.radius > 0.0)) throw losf::ContractError("--radius must be positive");
    int threads = args.threads > 0 ? args.threads : env_threads();

    losf::ModelParams<float> params = losf::load_checkpoint<float>(args.model_path);
    std::vector<losf::Vec3f> raw = losf::read_cloud_file(args.cloud_path);
    losf::PointCloud cloud = losf::normalize_cloud(raw);
    std::cerr << "cloud: " << cloud.size() << " points, normalized scale " << cloud.scale << "\n";

    losf::GridStats stats;
    losf::UdfGrid grid = losf::evaluate_grid(params, cloud, args.res, float(args.radius), threads,
                                             &stats);
    std::cout << "grid: " << args.res << "^3, predicted " << stats.predicted << ", sparse "
              << stats.sparse_nopatch << ", empty " << stats.empty << "\n";
    std::cout << "near-surface NoPatch fraction: " << stats.near_surface_nopatch_fraction()
              << "\nmean nearest-neighbor spacing: " << stats.mean_nn_spacing << "\n";
    if (stats.near_surface_nopatch_fraction() > 0.5)
        std::cerr << "warning: radius " << args.radius
                  << " is below the cloud's point spacing (mean nn " << stats.mean_nn_spacing
                  << "); most near-surface vertices hold the sentinel and the mesh will be "
                     "unreliable\n";
    if (!args.grid_path.empty()) losf::write_grid(args.grid_path, grid);

    losf::TriMesh mesh = losf::marching_cubes(grid, float(args.iso));
    if (args.project > 0) mesh = losf::project_vertices(mesh, grid, args.project);
    if (mesh.empty()) throw EmptyResult("reconstruction produced an empty mesh (radius/iso too "
                                        "small for this cloud?)");

    for (auto& v : mesh.vertices) v = cloud.denormalize(v);
    losf::write_mesh_file(args.out_path, mesh);
    std::cout << "mesh: " << mesh.vertices.size() << " vertices, " << mesh.triangles.size()
              << " triangles -> " << args.out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string gt_path, pred_path, csv_path;
    std::int64_t n = 100000;
    std::int64_t seed = 1;
};

int run_eval(const EvalArgs& args) {
    if (args.n < 1) throw losf::ContractError("--n must be positive");
    losf::TriMesh gt = losf::read_mesh_file(args.gt_path);
    losf::TriMesh pred = losf::read_mesh_file(args.pred_path);
    if (gt.empty()) throw EmptyResult("ground-truth mesh has no triangles: " + args.gt_path);
    if (pred.empty()) throw EmptyResult("predicted mesh has no triangles: " + args.pred_path);

    losf::Rng rng_gt = losf::make_rng(losf::mix_seed(std::uint64_t(args.seed), 0x67));
    losf::Rng rng_pred = losf::make_rng(losf::mix_seed(std::uint64_t(args.seed), 0x9e));
    std::vector<losf::Vec3f> gt_pts = losf::sample_mesh(gt, args.n, rng_gt);
    std::vector<losf::Vec3f> pred_pts = losf::sample_mesh(pred, args.n, rng_pred);

    losf::MetricReport report = losf::compute_metrics(pred_pts, gt_pts);
    report.to_text(std::cout);
    if (!args.csv_path.empty()) {
        std::ofstream csv(args.csv_path);
        if (!csv) throw losf::ContractError("cannot open csv for writing: " + args.csv_path);
        csv << losf::MetricReport::csv_header() << "\n";
        report.to_csv(csv);
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct CorruptArgs {
    std::string cloud_path, out_path;
    double noise_sigma = 0.0, outlier_frac = 0.0;
    std::int64_t seed = 1;
};

int run_corrupt(const CorruptArgs& args) {
    if (args.outlier_frac >= 1.0 || args.outlier_frac < 0.0)
        throw losf::ContractError("--outlier-frac must be in [0, 1)");
    if (args.noise_sigma < 0.0) throw losf::ContractError("--noise-sigma must be >= 0");
    if (args.noise_sigma == 0.0 && args.outlier_frac == 0.0) {
        // Identity contract: pass the file through byte-for-byte.
        std::ifstream in(args.cloud_path, std::ios::binary);
        if (!in) throw losf::ContractError("cannot open point cloud: " + args.cloud_path);
        std::ofstream out(args.out_path, std::ios::binary);
        if (!out) throw losf::ContractError("cannot open for writing: " + args.out_path);
        out << in.rdbuf();
        std::cout << "copied " << args.cloud_path << " -> " << args.out_path << " unchanged\n";
        return 0;
    }
    std::vector<losf::Vec3f> raw = losf::read_cloud_file(args.cloud_path);
    losf::PointCloud cloud = losf::normalize_cloud(raw);
    losf::Rng rng = losf::make_rng(losf::mix_seed(std::uint64_t(args.seed), 0xc0));
    losf::add_noise(cloud, args.noise_sigma, rng);
    losf::add_outliers(cloud, args.outlier_frac, rng);
    std::vector<losf::Vec3f> out_pts;
    out_pts.reserve(cloud.size());
    for (const auto& p : cloud.points) out_pts.push_back(cloud.denormalize(p));
    losf::write_cloud_file(args.out_path, out_pts);
    std::cout << "corrupted " << cloud.size() << " points (noise sigma " << args.noise_sigma
              << ", outlier fraction " << args.outlier_frac << ") -> " << args.out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LoSF: point-cloud surface reconstruction via learned local unsigned distance "
                 "fields"};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* cmd_gen = app.add_subcommand("gen-data", "generate the synthetic patch dataset");
    cmd_gen->add_option("--config", gen.config_path, "flat key=value generation config");
    cmd_gen->add_option("--out", gen.out_path, "output dataset file")->required();
    cmd_gen->add_option("--seed", gen.seed, "override config seed");
    cmd_gen->add_option("--count", gen.count, "override config sample count");

    TrainArgs tr;
    CLI::App* cmd_train = app.add_subcommand("train", "train the UDF network on a dataset");
    cmd_train->add_option("--data", tr.data_path, "dataset file from gen-data")->required();
    cmd_train->add_option("--out", tr.out_path, "output checkpoint file")->required();
    cmd_train->add_option("--config", tr.config_path, "flat key=value training config");
    cmd_train->add_option("--log", tr.log_path, "CSV log path (default <out>.log.csv)");
    cmd_train->add_option("--seed", tr.seed, "override config seed");
    cmd_train->add_option("--epochs", tr.epochs, "override config epochs");
    cmd_train->add_option("--batch", tr.batch, "override config batch size");
    cmd_train->add_option("--lr", tr.lr, "override config learning rate");
    cmd_train->add_option("--val-split", tr.val_split, "validation fraction (0, 0.5]");
    cmd_train->add_option("--threads", tr.threads, "worker threads (1 = bitwise reproducible)");

    ReconstructArgs rec;
    CLI::App* cmd_rec = app.add_subcommand("reconstruct", "reconstruct a mesh from a point cloud");
    cmd_rec->add_option("--model", rec.model_path, "trained checkpoint")->required();
    cmd_rec->add_option("--cloud", rec.cloud_path, "input cloud (.xyz or .ply)")->required();
    cmd_rec->add_option("--out", rec.out_path, "output mesh (.obj or .ply)")->required();
    cmd_rec->add_option("--radius", rec.radius, "patch extraction radius (default 0.018)");
    cmd_rec->add_option("--res", rec.res, "grid resolution per axis (default 128)");
    cmd_rec->add_option("--iso", rec.iso, "marching-cubes iso level (default 0.005)");
    cmd_rec->add_option("--project", rec.project, "vertex projection iterations (default 5)");
    cmd_rec->add_option("--save-grid", rec.grid_path, "also dump the UDF grid (raw f32 + .meta)");
    cmd_rec->add_option("--threads", rec.threads, "worker threads (1 = bitwise reproducible)");

    EvalArgs ev;
    CLI::App* cmd_eval = app.add_subcommand("eval", "Chamfer/F1 between two meshes");
    cmd_eval->add_option("--gt", ev.gt_path, "ground-truth mesh")->required();
    cmd_eval->add_option("--pred", ev.pred_path, "predicted mesh")->required();
    cmd_eval->add_option("--n", ev.n, "samples per mesh (default 100000)");
    cmd_eval->add_option("--seed", ev.seed, "sampling seed");
    cmd_eval->add_option("--csv", ev.csv_path, "also write the report as CSV");

    CorruptArgs co;
    CLI::App* cmd_corrupt = app.add_subcommand("corrupt", "add noise and outliers to a cloud");
    cmd_corrupt->add_option("--cloud", co.cloud_path, "input cloud (.xyz or .ply)")->required();
    cmd_corrupt->add_option("--out", co.out_path, "output cloud")->required();
    cmd_corrupt->add_option("--noise-sigma", co.noise_sigma, "Gaussian noise std (normalized units)");
    cmd_corrupt->add_option("--outlier-frac", co.outlier_frac, "fraction of points to replace");
    cmd_corrupt->add_option("--seed", co.seed, "corruption seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (cmd_gen->parsed()) return run_gen_data(gen);
        if (cmd_train->parsed()) return run_train(tr);
        if (cmd_rec->parsed()) return run_reconstruct(rec);
        if (cmd_eval->parsed()) return run_eval(ev);
        if (cmd_corrupt->parsed()) return run_corrupt(co);
    } catch (const EmptyResult& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
