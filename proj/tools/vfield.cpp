// vfield: command-line front end for the urban velocity field pipeline.

#include "vfield/pipeline.hpp"
#include "vfield/register.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace vfield;

namespace {

struct KeyHelp {
	const char* key;
	const char* help;
};

// Every config key is also a flag; the text names its default and where it comes from.
const KeyHelp config_keys[] = {
    {"blur_sigma", "Gaussian blur of the classifier response, px (default 3, published value)"},
    {"min_region_pixels", "smallest region kept as a car (default 10, published value)"},
    {"growth_threshold", "region-growing threshold on the blurred response (default 0, the decision boundary; not published)"},
    {"boosting_rounds", "AdaBoost rounds (default 200, published value)"},
    {"candidate_pool", "random features examined per round (default 250; not published)"},
    {"train_frames", "training frames used by train and pipeline (default 1)"},
    {"train_cars", "scattered cars per pipeline training frame (default 40)"},
    {"train_spacing", "minimum spacing of pipeline training cars, px (default 24)"},
    {"foreground_radius", "car-centre distance labelled foreground, px (default 6, published value)"},
    {"background_radius", "car-centre distance beyond which pixels are background, px (default 20, published value)"},
    {"foreground_fraction", "foreground share after background subsampling (default 0.15, published value)"},
    {"train_seed", "seed of feature sampling (default 17)"},
    {"label_seed", "seed of background subsampling (default 29)"},
    {"max_displacement", "largest match displacement, px/frame (default 30, published value)"},
    {"max_rotation_deg", "largest orientation change per frame, degrees (default 30, published value)"},
    {"max_direction_deg", "largest angle between motion and car axis, degrees (default 30, published value)"},
    {"low_speed_px_per_s", "speed at or below which the direction gate is skipped, px/s (default 5, published value)"},
    {"max_acceleration", "largest tracklet acceleration, px/frame^2 (default 4, published value)"},
    {"direction_axis", "axis for the direction gate: first, second or mean (default first; not published)"},
    {"frame_rate", "frames per second (default 5, published value)"},
    {"metres_per_pixel", "ground resolution (default 0.23, published value)"},
    {"field_range", "histogram velocity range, +/- px/frame (default 30; not published)"},
    {"field_bin_width", "histogram bin width, px/frame (default 1; not published)"},
    {"blob_sigma", "velocity blob sigma, bins (default 1; not published)"},
    {"render_max_speed", "speed at the red end of the colour ramp, px/frame (default 15)"},
    {"render_alpha", "opacity of the colour maps over the base image (default 1)"},
};

// Config file plus per-flag overrides for one subcommand.
struct ConfigOptions {
	std::string file;
	std::map<std::string, std::string> values;
	std::vector<std::pair<std::string, CLI::Option*>> flags;

	void attach(CLI::App* app)
	{
		app->add_option("--config", file, "key = value config file; flags override it")->check(CLI::ExistingFile);
		for (const auto& k : config_keys) {
			std::string flag = k.key;
			std::replace(flag.begin(), flag.end(), '_', '-');
			flags.emplace_back(k.key, app->add_option("--" + flag, values[k.key], k.help)->group("Config"));
		}
	}

	PipelineConfig resolve() const
	{
		PipelineConfig cfg;
		if (!file.empty())
			cfg = read_config(fs::path(file));
		for (const auto& [key, opt] : flags)
			if (opt->count())
				cfg.set(key, values.at(key));
		cfg.validate();
		return cfg;
	}
};

template <class Fn>
void write_file(const fs::path& path, Fn&& fn)
{
	if (path.has_parent_path())
		fs::create_directories(path.parent_path());
	auto out = detail::open_out(path);
	fn(out);
	if (!out)
		throw Error("failed writing " + path.string());
}

template <class T, class Fn>
T read_file(const fs::path& path, Fn&& fn)
{
	auto in = detail::open_in(path);
	return fn(in);
}

SceneSpec load_scene(const std::string& path)
{
	return path.empty() ? demo_scene() : read_scene(path);
}

RasterImage load_grey(const fs::path& path)
{
	return path.extension() == ".vfr" ? read_vfr(path) : read_pgm(path);
}

std::vector<std::vector<Detection>> split_by_frame(const std::vector<Detection>& all, std::size_t frames)
{
	std::vector<std::vector<Detection>> out(frames);
	for (const auto& d : all) {
		if (d.frame < 0 || static_cast<std::size_t>(d.frame) >= frames)
			throw Error("detection frame " + std::to_string(d.frame) + " has no image");
		out[d.frame].push_back(d);
	}
	return out;
}

} // namespace

int main(int argc, char** argv)
{
	CLI::App app{"Urban velocity fields from stabilised aerial video: detection, tracking and per-pixel velocity "
	             "histograms."};
	app.require_subcommand(1);
	app.set_version_flag("--version", "vfield 1.0");

	// simulate
	auto* sim = app.add_subcommand("simulate", "Render a synthetic traffic sequence and its ground truth");
	std::string sim_scene, sim_out;
	int sim_frames = -1, sim_scatter = -1;
	std::uint64_t sim_seed = 0;
	double sim_spacing = 24.0;
	sim->add_option("--scene", sim_scene, "scene file (default: the bundled three-lane demo)")->check(CLI::ExistingFile);
	sim->add_option("--out", sim_out, "output directory; receives frames/ and truth.csv")->required();
	auto* sim_frames_opt = sim->add_option("--frames", sim_frames, "override the scene's frame count");
	auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "override the scene seed");
	sim->add_option("--scatter", sim_scatter,
	                "instead of traffic, render this many stationary cars per frame at random headings");
	sim->add_option("--spacing", sim_spacing, "minimum distance between scattered cars, px (default 24)");

	// train
	auto* tr = app.add_subcommand("train", "Train the boosted pixel classifier");
	std::string tr_frames, tr_truth, tr_labels_in, tr_model, tr_labels_out, tr_log;
	tr->add_option("--frames", tr_frames, "directory of frame_NNNN.pgm images")->required();
	tr->add_option("--truth", tr_truth, "truth CSV; car centres of the first train_frames frames are labelled");
	tr->add_option("--labels", tr_labels_in, "labels CSV to train on instead of labelling from truth");
	tr->add_option("--model", tr_model, "output model file")->required();
	tr->add_option("--labels-out", tr_labels_out, "write the labels used");
	tr->add_option("--log", tr_log, "write per-round weighted error and exponential loss as CSV");
	ConfigOptions tr_cfg;
	tr_cfg.attach(tr);

	// detect
	auto* det = app.add_subcommand("detect", "Detect cars in every frame");
	std::string det_model, det_frames, det_out, det_dump;
	int det_dump_frame = -1;
	det->add_option("--model", det_model, "model file")->required();
	det->add_option("--frames", det_frames, "directory of frame_NNNN.pgm images")->required();
	det->add_option("--out", det_out, "detections CSV")->required();
	det->add_option("--dump-frame", det_dump_frame, "frame whose intermediate images are written to --dump-dir");
	det->add_option("--dump-dir", det_dump, "directory for response.vfr, blurred.vfr and segmentation.vfr");
	ConfigOptions det_cfg;
	det_cfg.attach(det);

	// track
	auto* trk = app.add_subcommand("track", "Chain detections into three-frame tracklets");
	std::string trk_frames, trk_dets, trk_out;
	trk->add_option("--frames", trk_frames, "directory of frame_NNNN.pgm images")->required();
	trk->add_option("--detections", trk_dets, "detections CSV")->required();
	trk->add_option("--out", trk_out, "tracklets CSV")->required();
	ConfigOptions trk_cfg;
	trk_cfg.attach(trk);

	// build-field
	auto* bf = app.add_subcommand("build-field", "Accumulate tracklets into per-pixel velocity histograms");
	std::string bf_tracklets, bf_like, bf_out;
	int bf_width = 0, bf_height = 0;
	bf->add_option("--tracklets", bf_tracklets, "tracklets CSV")->required();
	bf->add_option("--width", bf_width, "image width");
	bf->add_option("--height", bf_height, "image height");
	bf->add_option("--like", bf_like, "take width and height from this PGM or VFR image");
	bf->add_option("--out", bf_out, "field file (VFF1)")->required();
	ConfigOptions bf_cfg;
	bf_cfg.attach(bf);

	// render
	auto* ren = app.add_subcommand("render", "Render modal speed and direction maps");
	std::string ren_field, ren_base, ren_out;
	ren->add_option("--field", ren_field, "field file (VFF1)")->required();
	ren->add_option("--base", ren_base, "base image under the maps (PGM or VFR; default mid-grey)");
	ren->add_option("--out", ren_out, "output directory")->required();
	ConfigOptions ren_cfg;
	ren_cfg.attach(ren);

	// register
	auto* reg = app.add_subcommand("register", "Frame-to-frame registration tools");
	reg->require_subcommand(1);
	auto* reg_match = reg->add_subcommand("match", "NCC-match a grid of source patches in the target image");
	std::string rm_source, rm_target, rm_init, rm_out;
	GridMatchOptions rm_opts;
	reg_match->add_option("--source", rm_source, "source image (PGM or VFR)")->required();
	reg_match->add_option("--target", rm_target, "target image (PGM or VFR)")->required();
	reg_match->add_option("--init", rm_init, "transform predicting target positions (default identity)");
	reg_match->add_option("--spacing", rm_opts.spacing, "grid spacing, px (default 50, published value)");
	reg_match->add_option("--patch", rm_opts.patch_size, "patch side, px (default 75, published value)");
	reg_match->add_option("--search", rm_opts.search_radius, "search radius around the prediction, px (default 10)");
	reg_match->add_option("--min-score", rm_opts.min_score, "lowest NCC score kept (default 0.5)");
	reg_match->add_option("--out", rm_out, "correspondences CSV")->required();

	auto* reg_fit = reg->add_subcommand("fit", "Fit a second-order polyprojective transform");
	std::string rf_corrs, rf_init, rf_out, rf_survivors;
	bool rf_robust = false;
	CaseDeletionOptions rf_opts;
	FitOptions rf_fit;
	reg_fit->add_option("--correspondences", rf_corrs, "correspondences CSV")->required();
	reg_fit->add_option("--init", rf_init, "starting transform (default identity)");
	reg_fit->add_flag("--robust", rf_robust, "refit with case deletion of the worst correspondences");
	reg_fit->add_option("--drop", rf_opts.drop_fraction, "fraction deleted per round (default 0.05, published value)");
	reg_fit->add_option("--target-error", rf_opts.target_mean_error,
	                    "stop once the mean residual is below this, px (default 2, published value)");
	reg_fit->add_option("--out", rf_out, "transform file")->required();
	reg_fit->add_option("--survivors", rf_survivors, "write surviving correspondences (with --robust)");
	reg_fit->add_option("--width", rf_fit.domain.x, "source image width; the denominator is kept positive up to it");
	reg_fit->add_option("--height", rf_fit.domain.y, "source image height");

	auto* reg_disp = reg->add_subcommand("displacement", "Robust per-cell displacement field from matches");
	std::string rd_corrs, rd_out;
	int rd_width = 0, rd_height = 0, rd_cell = 200;
	reg_disp->add_option("--correspondences", rd_corrs, "correspondences CSV")->required();
	reg_disp->add_option("--width", rd_width, "image width")->required();
	reg_disp->add_option("--height", rd_height, "image height")->required();
	reg_disp->add_option("--cell", rd_cell, "cell side, px (default 200, published value)");
	reg_disp->add_option("--out", rd_out, "displacement field file")->required();

	// pipeline
	auto* pipe = app.add_subcommand("pipeline", "simulate, train, detect, track, build-field and render in one run");
	std::string pipe_scene, pipe_out;
	bool pipe_frames = false, pipe_quiet = false;
	pipe->add_option("--scene", pipe_scene, "scene file (default: the bundled three-lane demo)")->check(CLI::ExistingFile);
	pipe->add_option("--out", pipe_out, "output directory")->required();
	pipe->add_flag("--save-frames", pipe_frames, "also write the rendered frames");
	pipe->add_flag("--quiet", pipe_quiet, "no progress lines");
	ConfigOptions pipe_cfg;
	pipe_cfg.attach(pipe);

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError& e) {
		return app.exit(e);
	}

	try {
		if (*sim) {
			auto scene = load_scene(sim_scene);
			if (sim_frames_opt->count())
				scene.frames = sim_frames;
			if (sim_seed_opt->count())
				scene.seed = sim_seed;
			const auto s = sim_scatter >= 0 ? scatter_cars(scene, sim_scatter, sim_spacing) : generate(scene);
			write_frames(fs::path(sim_out) / "frames", s.frames);
			write_file(fs::path(sim_out) / "truth.csv", [&](std::ostream& o) { write_truth(o, s.truth); });
		} else if (*tr) {
			const auto cfg = tr_cfg.resolve();
			const auto frames = read_frames(tr_frames);
			LabeledPixelSet labels;
			if (!tr_labels_in.empty()) {
				labels = read_file<LabeledPixelSet>(tr_labels_in, [](std::istream& i) { return read_labels(i); });
			} else {
				if (tr_truth.empty())
					throw Error("train needs --truth or --labels");
				const auto truth = read_file<GroundTruth>(
				    tr_truth, [&](std::istream& i) { return read_truth(i, static_cast<int>(frames.size())); });
				const int n = std::min<int>(cfg.train_frames, static_cast<int>(frames.size()));
				Simulation s;
				s.frames.assign(frames.begin(), frames.begin() + n);
				s.truth.frames.assign(truth.frames.begin(), truth.frames.begin() + n);
				labels = label_frames(s, cfg);
			}
			const auto result = train_classifier(labels, frames, cfg);
			write_classifier(fs::path(tr_model), result.classifier);
			if (!tr_labels_out.empty())
				write_file(tr_labels_out, [&](std::ostream& o) { write_labels(o, labels); });
			if (!tr_log.empty())
				write_file(tr_log, [&](std::ostream& o) {
					o << "round,weighted_error,exp_loss\n" << std::setprecision(17);
					for (std::size_t r = 0; r < result.log.size(); ++r)
						o << r + 1 << ',' << result.log[r].weighted_error << ',' << result.log[r].exp_loss << '\n';
				});
		} else if (*det) {
			const auto cfg = det_cfg.resolve();
			const auto clf = read_classifier(fs::path(det_model));
			const auto frames = read_frames(det_frames);
			std::vector<Detection> all;
			for (std::size_t f = 0; f < frames.size(); ++f) {
				if (static_cast<int>(f) == det_dump_frame) {
					if (det_dump.empty())
						throw Error("--dump-frame needs --dump-dir");
					const auto st = detect_stages(clf, frames[f], static_cast<int>(f), cfg.detector());
					fs::create_directories(det_dump);
					write_file(fs::path(det_dump) / "response.vfr", [&](std::ostream& o) { write_vfr(o, st.response); });
					write_file(fs::path(det_dump) / "blurred.vfr", [&](std::ostream& o) { write_vfr(o, st.blurred); });
					write_file(fs::path(det_dump) / "segmentation.vfr",
					           [&](std::ostream& o) { write_vfr(o, st.segmentation); });
					all.insert(all.end(), st.detections.begin(), st.detections.end());
				} else {
					const auto d = detect_cars(clf, frames[f], static_cast<int>(f), cfg.detector());
					all.insert(all.end(), d.begin(), d.end());
				}
			}
			write_file(det_out, [&](std::ostream& o) { write_detections(o, all); });
		} else if (*trk) {
			const auto cfg = trk_cfg.resolve();
			const auto frames = read_frames(trk_frames);
			const auto all = read_file<std::vector<Detection>>(trk_dets, [](std::istream& i) { return read_detections(i); });
			const auto per_frame = split_by_frame(all, frames.size());
			const auto tracklets = track_sequence(frames, per_frame, cfg.gates(), cfg.frame_rate);
			write_file(trk_out, [&](std::ostream& o) { write_tracklets(o, tracklets); });
		} else if (*bf) {
			const auto cfg = bf_cfg.resolve();
			if (!bf_like.empty()) {
				const auto img = load_grey(bf_like);
				bf_width = img.width();
				bf_height = img.height();
			}
			if (bf_width <= 0 || bf_height <= 0)
				throw Error("build-field needs --width and --height or --like");
			const auto tracklets =
			    read_file<std::vector<Tracklet>>(bf_tracklets, [](std::istream& i) { return read_tracklets(i); });
			const auto field = build_field(tracklets, cfg.field_geometry(bf_width, bf_height), cfg.blob_sigma);
			write_field(fs::path(bf_out), field);
		} else if (*ren) {
			const auto cfg = ren_cfg.resolve();
			const auto field = read_field(fs::path(ren_field));
			const auto& g = field.geometry();
			const RasterImage base = ren_base.empty() ? RasterImage(g.width, g.height, 0.5) : load_grey(ren_base);
			const auto maps = render_maps(field, base, cfg.rendering());
			const fs::path dir(ren_out);
			fs::create_directories(dir);
			write_ppm(dir / "speed.ppm", maps.speed_overlay);
			write_ppm(dir / "direction.ppm", maps.direction_overlay);
			write_pgm(dir / "speed.pgm", maps.speed_grey);
			write_pgm(dir / "direction.pgm", maps.direction_grey);
		} else if (*reg_match) {
			const auto src = load_grey(rm_source), tgt = load_grey(rm_target);
			const auto init = rm_init.empty() ? PolyprojectiveTransform::identity()
			                                  : read_file<PolyprojectiveTransform>(
			                                        rm_init, [](std::istream& i) { return read_transform(i); });
			const auto corrs = grid_correspondences(src, tgt, init, rm_opts);
			write_file(rm_out, [&](std::ostream& o) { write_correspondences(o, corrs); });
		} else if (*reg_fit) {
			const auto corrs =
			    read_file<std::vector<Correspondence>>(rf_corrs, [](std::istream& i) { return read_correspondences(i); });
			const auto init = rf_init.empty() ? PolyprojectiveTransform::identity()
			                                  : read_file<PolyprojectiveTransform>(
			                                        rf_init, [](std::istream& i) { return read_transform(i); });
			PolyprojectiveTransform t;
			if (rf_robust) {
				const auto r = case_deletion_fit(corrs, init, rf_opts, rf_fit);
				t = r.model;
				std::cerr << "case deletion: " << r.survivors.size() << " of " << corrs.size()
				          << " correspondences kept, status "
				          << (r.status == FitStatus::converged        ? "converged"
				              : r.status == FitStatus::too_few_points ? "too-few-points"
				                                                      : "round-limit")
				          << '\n';
				if (!rf_survivors.empty()) {
					std::vector<Correspondence> kept;
					for (auto i : r.survivors)
						kept.push_back(corrs[i]);
					write_file(rf_survivors, [&](std::ostream& o) { write_correspondences(o, kept); });
				}
			} else {
				t = fit_sse(corrs, init, rf_fit).transform;
			}
			write_file(rf_out, [&](std::ostream& o) { write_transform(o, t); });
		} else if (*reg_disp) {
			const auto corrs =
			    read_file<std::vector<Correspondence>>(rd_corrs, [](std::istream& i) { return read_correspondences(i); });
			const auto field = build_displacement_field(corrs, rd_width, rd_height, rd_cell);
			write_file(rd_out, [&](std::ostream& o) { write_displacement_field(o, field); });
		} else if (*pipe) {
			const auto cfg = pipe_cfg.resolve();
			const auto scene = load_scene(pipe_scene);
			const auto out = run_pipeline(scene, cfg, [&](const std::string& stage) {
				if (!pipe_quiet)
					std::cerr << "vfield: " << stage << " done\n";
			});
			write_pipeline(pipe_out, out, pipe_frames);
			if (!pipe_quiet) {
				std::ostringstream csv;
				write_report(std::cout, csv, out.summary);
			}
		}
	} catch (const std::exception& e) {
		std::cerr << "vfield: error: " << e.what() << '\n';
		return 1;
	}
	return 0;
}
