#ifndef VFIELD_PIPELINE_HPP
#define VFIELD_PIPELINE_HPP

#include "vfield/config.hpp"
#include "vfield/field.hpp"
#include "vfield/image_io.hpp"

#include <chrono>
#include <functional>

namespace vfield {

/// Static training frames with scattered cars, drawn with the scene's appearance settings.
inline Simulation training_frames(const SceneSpec& scene, const PipelineConfig& cfg)
{
	SceneSpec ts = scene;
	ts.frames = cfg.train_frames;
	ts.seed = detail::splitmix64(scene.seed ^ cfg.train_seed);
	ts.jitter = 0.0;
	return scatter_cars(ts, cfg.train_cars, cfg.train_spacing);
}

/// Labelled pixels for every frame of `sim`, each frame subsampled with its own seed.
inline LabeledPixelSet label_frames(const Simulation& sim, const PipelineConfig& cfg)
{
	LabeledPixelSet out;
	for (std::size_t f = 0; f < sim.frames.size(); ++f) {
		const auto centres = truth_labels(sim.truth, static_cast<int>(f));
		if (centres.empty())
			continue;
		const auto& img = sim.frames[f];
		auto l = build_labels(centres, img.width(), img.height(), cfg.label_seed + f, static_cast<int>(f), cfg.labelling());
		out.pixels.insert(out.pixels.end(), l.pixels.begin(), l.pixels.end());
	}
	return out;
}

inline TrainingResult train_classifier(const LabeledPixelSet& labels, std::span<const RasterImage> images,
                                       const PipelineConfig& cfg)
{
	std::mt19937_64 rng(cfg.train_seed);
	return train(labels, images, cfg.training(), rng);
}

/// Detections of every frame, frame by frame.
inline std::vector<std::vector<Detection>> detect_all(const StrongClassifier& clf, std::span<const RasterImage> frames,
                                                      const DetectorOptions& opts)
{
	std::vector<std::vector<Detection>> out;
	out.reserve(frames.size());
	for (std::size_t f = 0; f < frames.size(); ++f)
		out.push_back(detect_cars(clf, frames[f], static_cast<int>(f), opts));
	return out;
}

/**
 * Field of all tracklets. Tracklets are split into a fixed number of
 * contiguous chunks that are deposited concurrently and merged in chunk
 * order, so the result does not depend on the worker count.
 */
inline VelocityField build_field(std::span<const Tracklet> tracklets, const FieldGeometry& geometry, double sigma)
{
	constexpr std::size_t chunks = 8;
	std::vector<VelocityField> parts(chunks, VelocityField(geometry));
	parallel_for(chunks, [&](std::size_t c) {
		const std::size_t a = tracklets.size() * c / chunks, b = tracklets.size() * (c + 1) / chunks;
		deposit_all(parts[c], tracklets.subspan(a, b - a), sigma);
	});
	VelocityField field(geometry);
	for (const auto& p : parts)
		field.merge(p);
	return field;
}

/// Per-pixel mean of a frame sequence; moving cars fade out.
inline RasterImage mean_image(std::span<const RasterImage> frames)
{
	if (frames.empty())
		throw Error("no frames to average");
	RasterImage out(frames[0].width(), frames[0].height());
	for (const auto& f : frames) {
		if (f.width() != out.width() || f.height() != out.height())
			throw Error("frame dimensions differ");
		for (std::size_t i = 0; i < out.pixels().size(); ++i)
			out.pixels()[i] += f.pixels()[i];
	}
	for (double& v : out.pixels())
		v /= static_cast<double>(frames.size());
	return out;
}

/// Agreement between the field's modes and the lanes that generated the traffic.
struct FieldRecovery {
	int evaluated = 0;     // lane pixels with enough segment crossings
	int direction_ok = 0;  // modal direction within tolerance of the lane tangent
	int speed_ok = 0;      // modal speed within one bin of the lane speed
	int both_ok = 0;
	double fraction() const { return evaluated ? static_cast<double>(both_ok) / evaluated : 0.0; }
};

/**
 * Compares modes at lane pixels (within half a lane width of exactly one
 * centreline) that at least `min_segments` segments crossed. Each deposit adds
 * unit mass per crossed pixel, so pixel mass counts crossings.
 */
inline FieldRecovery evaluate_field(const VelocityField& field, const SceneSpec& scene, int min_segments = 5,
                                    double max_direction_deg = 15.0)
{
	const auto& g = field.geometry();
	std::vector<Polyline> lines;
	for (const auto& lane : scene.lanes) {
		auto pts = lane.centreline;
		if (lane.direction < 0)
			std::reverse(pts.begin(), pts.end());
		lines.emplace_back(std::move(pts));
	}
	FieldRecovery r;
	for (const auto& [key, h] : field.histograms()) {
		const Pixel p{static_cast<int>(key % static_cast<std::uint32_t>(g.width)),
		              static_cast<int>(key / static_cast<std::uint32_t>(g.width))};
		double mass = 0.0;
		for (const auto& [bin, m] : h)
			mass += m;
		if (mass < min_segments - 1e-9)
			continue;
		int lane = -1, hits = 0;
		double s = 0.0;
		for (std::size_t l = 0; l < lines.size(); ++l) {
			const auto [sl, dist] = lines[l].project({static_cast<double>(p.x), static_cast<double>(p.y)});
			if (dist <= 0.5 * scene.lanes[l].width) {
				lane = static_cast<int>(l);
				s = sl;
				++hits;
			}
		}
		if (hits != 1)
			continue;
		const auto m = field.mode_of(h);
		if (!m)
			continue;
		++r.evaluated;
		const Point2 t = lines[lane].tangent(s);
		const double speed = scene.lanes[lane].speed;
		bool dir_ok = false;
		if (m->speed > 0.0) {
			const double diff = std::abs(std::remainder(m->direction - std::atan2(t.y, t.x), 2.0 * std::numbers::pi));
			dir_ok = degrees(diff) <= max_direction_deg;
		}
		const bool speed_ok = std::abs(m->speed - speed) <= g.bin_width + 1e-9;
		r.direction_ok += dir_ok;
		r.speed_ok += speed_ok;
		r.both_ok += dir_ok && speed_ok;
	}
	return r;
}

struct PipelineSummary {
	int frames = 0;
	int training_frames = 0;
	std::size_t training_labels = 0;
	int boosting_rounds = 0;
	std::size_t detections = 0;
	std::size_t tracklets = 0;
	std::size_t field_pixels = 0;
	double field_mass = 0.0;
	double coverage = 0.0; // fraction of image pixels holding a histogram
	FieldRecovery recovery;
	std::vector<std::pair<std::string, double>> timings; // seconds per stage
};

struct PipelineOutputs {
	Simulation sim;
	TrainingResult training;
	std::vector<std::vector<Detection>> detections;
	std::vector<Tracklet> tracklets;
	VelocityField field;
	RenderedMaps maps;
	PipelineSummary summary;
};

/// Runs simulate, train, detect, track, build-field and render in memory.
inline PipelineOutputs run_pipeline(const SceneSpec& scene, const PipelineConfig& cfg,
                                    const std::function<void(const std::string&)>& progress = {})
{
	cfg.validate();
	PipelineOutputs out;
	auto& sum = out.summary;
	auto clock = std::chrono::steady_clock::now();
	auto stage = [&](const std::string& name) {
		const auto now = std::chrono::steady_clock::now();
		sum.timings.emplace_back(name, std::chrono::duration<double>(now - clock).count());
		clock = now;
		if (progress)
			progress(name);
	};

	out.sim = generate(scene);
	stage("simulate");

	const auto train_sim = training_frames(scene, cfg);
	const auto labels = label_frames(train_sim, cfg);
	out.training = train_classifier(labels, train_sim.frames, cfg);
	stage("train");

	out.detections = detect_all(out.training.classifier, out.sim.frames, cfg.detector());
	stage("detect");

	out.tracklets = track_sequence(out.sim.frames, out.detections, cfg.gates(), cfg.frame_rate);
	stage("track");

	out.field = build_field(out.tracklets, cfg.field_geometry(scene.width, scene.height), cfg.blob_sigma);
	stage("build-field");

	const RasterImage base = out.sim.frames.empty() ? RasterImage(scene.width, scene.height, scene.background_mean)
	                                                : mean_image(out.sim.frames);
	out.maps = render_maps(out.field, base, cfg.rendering());
	stage("render");

	sum.frames = static_cast<int>(out.sim.frames.size());
	sum.training_frames = static_cast<int>(train_sim.frames.size());
	sum.training_labels = labels.pixels.size();
	sum.boosting_rounds = static_cast<int>(out.training.classifier.rounds.size());
	for (const auto& d : out.detections)
		sum.detections += d.size();
	sum.tracklets = out.tracklets.size();
	sum.field_pixels = out.field.histograms().size();
	sum.field_mass = out.field.total_mass();
	sum.coverage = static_cast<double>(sum.field_pixels) / (static_cast<double>(scene.width) * scene.height);
	sum.recovery = evaluate_field(out.field, scene);
	return out;
}

/// Report rows shared by the text and CSV forms; timing is kept apart so reruns stay byte-identical.
inline std::vector<std::pair<std::string, std::string>> report_rows(const PipelineSummary& s)
{
	auto num = [](double v) {
		std::ostringstream os;
		os << std::setprecision(6) << v;
		return os.str();
	};
	return {
	    {"frames", std::to_string(s.frames)},
	    {"training_frames", std::to_string(s.training_frames)},
	    {"training_labels", std::to_string(s.training_labels)},
	    {"boosting_rounds", std::to_string(s.boosting_rounds)},
	    {"detections", std::to_string(s.detections)},
	    {"tracklets", std::to_string(s.tracklets)},
	    {"field_pixels", std::to_string(s.field_pixels)},
	    {"field_mass", num(s.field_mass)},
	    {"field_coverage", num(s.coverage)},
	    {"lane_pixels_evaluated", std::to_string(s.recovery.evaluated)},
	    {"lane_direction_ok", std::to_string(s.recovery.direction_ok)},
	    {"lane_speed_ok", std::to_string(s.recovery.speed_ok)},
	    {"lane_recovery_fraction", num(s.recovery.fraction())},
	};
}

inline void write_report(std::ostream& text, std::ostream& csv, const PipelineSummary& s)
{
	const auto rows = report_rows(s);
	std::size_t wide = 0;
	for (const auto& [k, v] : rows)
		wide = std::max(wide, k.size());
	csv << "key,value\n";
	for (const auto& [k, v] : rows) {
		text << std::left << std::setw(static_cast<int>(wide) + 2) << k << v << '\n';
		csv << k << ',' << v << '\n';
	}
}

inline std::string frame_name(std::size_t index)
{
	std::ostringstream name;
	name << "frame_" << std::setw(4) << std::setfill('0') << index << ".pgm";
	return name.str();
}

/// Frames as 16-bit PGM files frame_0000.pgm, frame_0001.pgm, ... in `dir`.
inline void write_frames(const std::filesystem::path& dir, std::span<const RasterImage> frames)
{
	std::filesystem::create_directories(dir);
	for (std::size_t i = 0; i < frames.size(); ++i)
		write_pgm(dir / frame_name(i), frames[i], true);
}

/// Reads the frame_*.pgm files of `dir` in name order.
inline std::vector<RasterImage> read_frames(const std::filesystem::path& dir)
{
	if (!std::filesystem::is_directory(dir))
		throw Error("frame directory " + dir.string() + " does not exist");
	std::vector<std::filesystem::path> paths;
	for (const auto& e : std::filesystem::directory_iterator(dir)) {
		const auto name = e.path().filename().string();
		if (e.is_regular_file() && name.rfind("frame_", 0) == 0 && e.path().extension() == ".pgm")
			paths.push_back(e.path());
	}
	std::sort(paths.begin(), paths.end());
	std::vector<RasterImage> frames;
	for (const auto& p : paths)
		frames.push_back(read_pgm(p));
	return frames;
}

/// Writes every pipeline artifact into `dir`; frames only when `save_frames` is set.
inline void write_pipeline(const std::filesystem::path& dir, const PipelineOutputs& out, bool save_frames = false)
{
	std::filesystem::create_directories(dir);
	auto open = [&](const char* name) { return detail::open_out(dir / name); };
	{
		auto f = open("truth.csv");
		write_truth(f, out.sim.truth);
	}
	{
		auto f = open("model.txt");
		write_classifier(f, out.training.classifier);
	}
	{
		auto f = open("detections.csv");
		std::vector<Detection> all;
		for (const auto& d : out.detections)
			all.insert(all.end(), d.begin(), d.end());
		write_detections(f, all);
	}
	{
		auto f = open("tracklets.csv");
		write_tracklets(f, out.tracklets);
	}
	write_field(dir / "field.vff", out.field);
	write_pgm(dir / "speed.pgm", out.maps.speed_grey);
	write_pgm(dir / "direction.pgm", out.maps.direction_grey);
	write_ppm(dir / "speed.ppm", out.maps.speed_overlay);
	write_ppm(dir / "direction.ppm", out.maps.direction_overlay);
	{
		auto f = open("speed_mode.vfr");
		write_vfr(f, out.maps.modes.speed);
	}
	{
		auto f = open("direction_mode.vfr");
		write_vfr(f, out.maps.modes.direction);
	}
	{
		auto text = open("report.txt");
		auto csv = open("report.csv");
		write_report(text, csv, out.summary);
	}
	{
		auto f = open("timing.txt");
		for (const auto& [stage, sec] : out.summary.timings)
			f << stage << ' ' << std::fixed << std::setprecision(3) << sec << '\n';
	}
	if (save_frames)
		write_frames(dir / "frames", out.sim.frames);
}

} // namespace vfield

#endif
