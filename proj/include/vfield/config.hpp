#ifndef VFIELD_CONFIG_HPP
#define VFIELD_CONFIG_HPP

#include "vfield/classify.hpp"
#include "vfield/detect.hpp"
#include "vfield/field.hpp"
#include "vfield/sim.hpp"
#include "vfield/track.hpp"

#include <functional>

namespace vfield {

/// Every pipeline tunable. Defaults follow the published system where it states a value.
struct PipelineConfig {
	// detection
	double blur_sigma = 3.0;
	int min_region_pixels = 10;
	double growth_threshold = 0.0;
	// classifier training
	int boosting_rounds = 200;
	int candidate_pool = 250;
	int train_frames = 1;
	int train_cars = 40;         // scattered cars per training frame
	double train_spacing = 24.0; // minimum distance between training cars, px
	double foreground_radius = 6.0;
	double background_radius = 20.0;
	double foreground_fraction = 0.15;
	std::uint64_t train_seed = 17;
	std::uint64_t label_seed = 29;
	// tracking
	double max_displacement = 30.0;
	double max_rotation_deg = 30.0;
	double max_direction_deg = 30.0;
	double low_speed_px_per_s = 5.0;
	double max_acceleration = 4.0;
	std::string direction_axis = "first";
	double frame_rate = 5.0;
	double metres_per_pixel = 0.23;
	// field
	double field_range = 30.0;
	double field_bin_width = 1.0;
	double blob_sigma = 1.0;
	// rendering
	double render_max_speed = 15.0;
	double render_alpha = 1.0;

	DetectorOptions detector() const { return {blur_sigma, growth_threshold, min_region_pixels}; }
	TrainOptions training() const { return {boosting_rounds, candidate_pool}; }
	LabelOptions labelling() const { return {foreground_radius, background_radius, foreground_fraction}; }

	Gates gates() const
	{
		Gates g{max_displacement, max_rotation_deg, max_direction_deg, low_speed_px_per_s, max_acceleration};
		g.direction_axis = direction_axis == "second" ? DirectionAxis::second
		                   : direction_axis == "mean" ? DirectionAxis::mean
		                                              : DirectionAxis::first;
		return g;
	}

	FieldGeometry field_geometry(int width, int height) const { return {width, height, field_range, field_bin_width}; }
	RenderOptions rendering() const { return {render_max_speed, render_alpha}; }

	/// Throws naming the first offending key.
	void validate() const
	{
		auto positive = [](const char* key, double v) {
			if (!(v > 0.0) || !std::isfinite(v))
				throw Error(std::string("config key '") + key + "' must be positive");
		};
		auto non_negative = [](const char* key, double v) {
			if (!(v >= 0.0) || !std::isfinite(v))
				throw Error(std::string("config key '") + key + "' must be non-negative");
		};
		non_negative("blur_sigma", blur_sigma);
		positive("min_region_pixels", min_region_pixels);
		if (!std::isfinite(growth_threshold))
			throw Error("config key 'growth_threshold' must be finite");
		positive("boosting_rounds", boosting_rounds);
		positive("candidate_pool", candidate_pool);
		positive("train_frames", train_frames);
		positive("train_cars", train_cars);
		non_negative("train_spacing", train_spacing);
		positive("foreground_radius", foreground_radius);
		positive("background_radius", background_radius);
		if (!(background_radius >= foreground_radius))
			throw Error("config key 'background_radius' must not be below foreground_radius");
		if (!(foreground_fraction > 0.0 && foreground_fraction < 1.0))
			throw Error("config key 'foreground_fraction' must lie in (0, 1)");
		positive("max_displacement", max_displacement);
		positive("max_rotation_deg", max_rotation_deg);
		positive("max_direction_deg", max_direction_deg);
		positive("low_speed_px_per_s", low_speed_px_per_s);
		positive("max_acceleration", max_acceleration);
		if (direction_axis != "first" && direction_axis != "second" && direction_axis != "mean")
			throw Error("config key 'direction_axis' must be first, second or mean");
		positive("frame_rate", frame_rate);
		positive("metres_per_pixel", metres_per_pixel);
		positive("field_range", field_range);
		positive("field_bin_width", field_bin_width);
		if (!(field_range >= max_displacement))
			throw Error("config key 'field_range' must cover max_displacement");
		non_negative("blob_sigma", blob_sigma);
		positive("render_max_speed", render_max_speed);
		if (!(render_alpha >= 0.0 && render_alpha <= 1.0))
			throw Error("config key 'render_alpha' must lie in [0, 1]");
	}

	/// Assigns one key from its text value; throws naming the key if unknown or unparsable.
	void set(const std::string& key, const std::string& value)
	{
		using detail::parse_value;
		static const std::map<std::string, std::function<void(PipelineConfig&, const std::string&, const std::string&)>>
		    setters = {
#define VFIELD_KEY(name, type) {#name, [](PipelineConfig& c, const std::string& k, const std::string& v) { c.name = parse_value<type>(k, v); }}
		        VFIELD_KEY(blur_sigma, double),
		        VFIELD_KEY(min_region_pixels, int),
		        VFIELD_KEY(growth_threshold, double),
		        VFIELD_KEY(boosting_rounds, int),
		        VFIELD_KEY(candidate_pool, int),
		        VFIELD_KEY(train_frames, int),
		        VFIELD_KEY(train_cars, int),
		        VFIELD_KEY(train_spacing, double),
		        VFIELD_KEY(foreground_radius, double),
		        VFIELD_KEY(background_radius, double),
		        VFIELD_KEY(foreground_fraction, double),
		        VFIELD_KEY(train_seed, std::uint64_t),
		        VFIELD_KEY(label_seed, std::uint64_t),
		        VFIELD_KEY(max_displacement, double),
		        VFIELD_KEY(max_rotation_deg, double),
		        VFIELD_KEY(max_direction_deg, double),
		        VFIELD_KEY(low_speed_px_per_s, double),
		        VFIELD_KEY(max_acceleration, double),
		        VFIELD_KEY(direction_axis, std::string),
		        VFIELD_KEY(frame_rate, double),
		        VFIELD_KEY(metres_per_pixel, double),
		        VFIELD_KEY(field_range, double),
		        VFIELD_KEY(field_bin_width, double),
		        VFIELD_KEY(blob_sigma, double),
		        VFIELD_KEY(render_max_speed, double),
		        VFIELD_KEY(render_alpha, double),
#undef VFIELD_KEY
		    };
		const auto it = setters.find(key);
		if (it == setters.end())
			throw Error("unknown config key '" + key + "'");
		it->second(*this, key, value);
	}
};

/// Reads "key = value" lines over the defaults and validates the result.
inline PipelineConfig read_config(std::istream& in, PipelineConfig base = {})
{
	for (const auto& [key, value] : detail::read_key_values(in))
		base.set(key, value);
	base.validate();
	return base;
}

inline PipelineConfig read_config(const std::filesystem::path& path, PipelineConfig base = {})
{
	std::ifstream in(path);
	if (!in)
		throw Error("cannot open config file " + path.string());
	return read_config(in, std::move(base));
}

} // namespace vfield

#endif
