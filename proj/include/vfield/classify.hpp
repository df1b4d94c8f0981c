#ifndef VFIELD_CLASSIFY_HPP
#define VFIELD_CLASSIFY_HPP

#include "vfield/parallel.hpp"
#include "vfield/raster.hpp"

#include <array>
#include <bit>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

namespace vfield {

/// Largest |corner offset| a feature rectangle may use.
inline constexpr int max_feature_offset = 40;
/// Zero border needed around an integral image so every feature is evaluable.
inline constexpr int feature_padding = max_feature_offset + 1;

/// Rectangle of pixel offsets relative to the probe pixel, inclusive on both ends.
struct Rect {
	int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
	friend bool operator==(const Rect&, const Rect&) = default;
};

/// Sum of intensities under the positive rectangles minus the sum under the negative ones.
struct RectFeature {
	std::vector<Rect> positive;
	std::vector<Rect> negative;

	/// `ii` must carry at least `feature_padding` of zero border.
	double evaluate(const IntegralImage& ii, int x, int y) const
	{
		double v = 0.0;
		for (const Rect& r : positive)
			v += ii.rect_sum(x + r.x0, y + r.y0, x + r.x1 + 1, y + r.y1 + 1);
		for (const Rect& r : negative)
			v -= ii.rect_sum(x + r.x0, y + r.y0, x + r.x1 + 1, y + r.y1 + 1);
		return v;
	}

	friend bool operator==(const RectFeature&, const RectFeature&) = default;
};

/// Decision stump on one feature. sign(0) is taken as -1: votes `polarity` only when value > threshold.
struct WeakClassifier {
	RectFeature feature;
	double threshold = 0.0;
	int polarity = 1;
	double alpha = 0.0;

	int vote(double value) const { return value > threshold ? polarity : -polarity; }

	friend bool operator==(const WeakClassifier&, const WeakClassifier&) = default;
};

struct StrongClassifier {
	std::vector<WeakClassifier> rounds;

	/// Real-valued margin sum_t alpha_t * vote_t at one pixel.
	double margin(const IntegralImage& ii, int x, int y) const
	{
		double m = 0.0;
		for (const auto& wc : rounds)
			m += wc.alpha * wc.vote(wc.feature.evaluate(ii, x, y));
		return m;
	}

	friend bool operator==(const StrongClassifier&, const StrongClassifier&) = default;
};

struct LabeledPixel {
	int image = 0;
	int x = 0;
	int y = 0;
	int label = 0; // +1 foreground (car), -1 background
	friend bool operator==(const LabeledPixel&, const LabeledPixel&) = default;
};

struct LabeledPixelSet {
	std::vector<LabeledPixel> pixels;

	std::size_t count(int label) const
	{
		return static_cast<std::size_t>(
		    std::count_if(pixels.begin(), pixels.end(), [&](const LabeledPixel& p) { return p.label == label; }));
	}
};

struct LabelOptions {
	double foreground_radius = 6.0;
	double background_radius = 20.0;
	double foreground_fraction = 0.15;
};

/**
 * Labels pixels around marked car centres: foreground within `foreground_radius`
 * of some centre, background farther than `background_radius` from every centre,
 * the band between left unlabelled. Background is subsampled (seeded) so that
 * foreground makes up `foreground_fraction` of the returned set.
 */
inline LabeledPixelSet build_labels(std::span<const Point2> centres, int width, int height, std::uint64_t seed,
                                    int image_id = 0, const LabelOptions& opts = {})
{
	if (centres.empty())
		throw Error("no car centres to label");
	if (width <= 0 || height <= 0)
		throw Error("label image dimensions must be positive");
	if (!(opts.foreground_fraction > 0.0 && opts.foreground_fraction < 1.0))
		throw Error("foreground fraction must lie in (0, 1)");
	for (Point2 c : centres)
		if (!(c.x >= 0.0 && c.y >= 0.0 && c.x <= width - 1 && c.y <= height - 1))
			throw Error("car centre outside the image");

	enum : std::uint8_t { far = 0, band = 1, fg = 2 };
	Image<std::uint8_t> cls(width, height, far);
	auto stamp = [&](Point2 c, double radius, std::uint8_t value) {
		const double r2 = radius * radius;
		const int xa = std::max(0, static_cast<int>(std::floor(c.x - radius)));
		const int xb = std::min(width - 1, static_cast<int>(std::ceil(c.x + radius)));
		const int ya = std::max(0, static_cast<int>(std::floor(c.y - radius)));
		const int yb = std::min(height - 1, static_cast<int>(std::ceil(c.y + radius)));
		for (int y = ya; y <= yb; ++y)
			for (int x = xa; x <= xb; ++x) {
				const double dx = x - c.x, dy = y - c.y;
				if (dx * dx + dy * dy <= r2 && cls(x, y) < value)
					cls(x, y) = value;
			}
	};
	for (Point2 c : centres)
		stamp(c, opts.background_radius, band);
	for (Point2 c : centres)
		stamp(c, opts.foreground_radius, fg);

	LabeledPixelSet out;
	std::vector<LabeledPixel> background;
	for (int y = 0; y < height; ++y)
		for (int x = 0; x < width; ++x) {
			if (cls(x, y) == fg)
				out.pixels.push_back({image_id, x, y, +1});
			else if (cls(x, y) == far)
				background.push_back({image_id, x, y, -1});
		}

	const double fg_count = static_cast<double>(out.pixels.size());
	const auto wanted = static_cast<std::size_t>(
	    std::llround(fg_count * (1.0 - opts.foreground_fraction) / opts.foreground_fraction));
	const std::size_t keep = std::min(wanted, background.size());

	// partial Fisher-Yates, then restore raster order of the kept prefix
	std::mt19937_64 rng(seed);
	for (std::size_t i = 0; i < keep; ++i) {
		std::uniform_int_distribution<std::size_t> pick(i, background.size() - 1);
		std::swap(background[i], background[pick(rng)]);
	}
	background.resize(keep);
	std::sort(background.begin(), background.end(),
	          [](const LabeledPixel& a, const LabeledPixel& b) { return Pixel{a.x, a.y} < Pixel{b.x, b.y}; });
	out.pixels.insert(out.pixels.end(), background.begin(), background.end());
	return out;
}

/// Random rectangle feature: 1-5 rectangles of each sign, corners ~ N(0, 10^2) px around the probe.
template <class Rng>
RectFeature sample_feature(Rng& rng, double corner_sigma = 10.0)
{
	std::uniform_int_distribution<int> count(1, 5);
	std::normal_distribution<double> corner(0.0, corner_sigma);
	auto coord = [&] {
		const long v = std::lround(corner(rng));
		return static_cast<int>(std::clamp<long>(v, -max_feature_offset, max_feature_offset));
	};
	auto rect = [&] {
		const int ax = coord(), ay = coord(), bx = coord(), by = coord();
		return Rect{std::min(ax, bx), std::min(ay, by), std::max(ax, bx), std::max(ay, by)};
	};
	RectFeature f;
	const int npos = count(rng);
	const int nneg = count(rng);
	for (int i = 0; i < npos; ++i)
		f.positive.push_back(rect());
	for (int i = 0; i < nneg; ++i)
		f.negative.push_back(rect());
	return f;
}

struct TrainOptions {
	int rounds = 200;
	int candidate_pool = 250;
};

struct TrainingRound {
	double weighted_error = 0.0;
	double exp_loss = 0.0; // mean exp(-y * margin) over the training set after this round
};

struct TrainingResult {
	StrongClassifier classifier;
	std::vector<TrainingRound> log;
	bool stopped_early = false;
};

namespace detail {

struct StumpChoice {
	double error = std::numeric_limits<double>::infinity();
	double threshold = 0.0;
	int polarity = 1;
};

struct SortEntry {
	std::uint64_t key;
	double signed_weight; // +w for foreground, -w for background
};

// Maps a double onto an unsigned key with the same ordering.
inline std::uint64_t order_key(double v)
{
	const auto bits = std::bit_cast<std::uint64_t>(v == 0.0 ? 0.0 : v);
	return bits >> 63 ? ~bits : bits | (std::uint64_t{1} << 63);
}

inline double key_value(std::uint64_t key)
{
	return std::bit_cast<double>(key >> 63 ? key & ~(std::uint64_t{1} << 63) : ~key);
}

// Stable LSD radix sort by key, skipping byte positions shared by every entry.
inline void radix_sort(std::vector<SortEntry>& a, std::vector<SortEntry>& scratch)
{
	std::array<std::array<std::uint32_t, 256>, 8> counts{};
	for (const auto& e : a)
		for (int d = 0; d < 8; ++d)
			++counts[d][(e.key >> (8 * d)) & 0xff];
	scratch.resize(a.size());
	for (int d = 0; d < 8; ++d) {
		auto& c = counts[d];
		if (std::find(c.begin(), c.end(), a.size()) != c.end())
			continue;
		std::uint32_t sum = 0;
		for (auto& v : c)
			sum += std::exchange(v, sum);
		for (const auto& e : a)
			scratch[c[(e.key >> (8 * d)) & 0xff]++] = e;
		a.swap(scratch);
	}
}

// Exact weighted-error minimization over all thresholds between sorted feature values.
inline StumpChoice best_stump(std::span<const double> values, std::span<const double> signed_weights,
                             std::vector<SortEntry>& order, std::vector<SortEntry>& scratch)
{
	const std::size_t n = values.size();
	order.resize(n);
	double total = 0.0, neg_total = 0.0;
	for (std::size_t i = 0; i < n; ++i) {
		order[i] = {order_key(values[i]), signed_weights[i]};
		total += std::abs(signed_weights[i]);
		if (signed_weights[i] < 0.0)
			neg_total -= signed_weights[i];
	}
	radix_sort(order, scratch);

	// split k: samples [0,k) fall at or below the threshold, [k,n) above it
	StumpChoice best;
	double pos_below = 0.0, neg_below = 0.0;
	for (std::size_t k = 0; k <= n; ++k) {
		if (k > 0) {
			const double w = order[k - 1].signed_weight;
			if (w > 0.0)
				pos_below += w;
			else
				neg_below -= w;
		}
		if (k > 0 && k < n && order[k - 1].key == order[k].key)
			continue;
		const double err_pos = std::max(0.0, pos_below + (neg_total - neg_below));
		const double err_neg = std::max(0.0, total - err_pos);
		if (err_pos < best.error || err_neg < best.error) {
			const double threshold = k == 0 ? key_value(order[0].key) - 1.0
			                         : k == n ? key_value(order[n - 1].key) + 1.0
			                                  : 0.5 * (key_value(order[k - 1].key) + key_value(order[k].key));
			if (err_pos < best.error)
				best = {err_pos, threshold, +1};
			if (err_neg < best.error)
				best = {err_neg, threshold, -1};
		}
	}
	return best;
}

} // namespace detail

/**
 * Discrete AdaBoost over rectangle-feature stumps. Each round draws
 * `candidate_pool` fresh features from `next_feature`, keeps the stump with the
 * lowest weighted error (lowest candidate index on ties), and reweights.
 * Training stops early, keeping the rounds so far, once no stump beats 0.5
 * by more than chance_tolerance.
 */
inline constexpr double chance_tolerance = 1e-9;

template <class FeatureSource>
TrainingResult train_with(const LabeledPixelSet& labels, std::span<const RasterImage> images,
                          const TrainOptions& opts, FeatureSource&& next_feature)
{
	if (opts.rounds <= 0 || opts.candidate_pool <= 0)
		throw Error("boosting rounds and candidate pool must be positive");
	const auto& px = labels.pixels;
	if (labels.count(+1) == 0 || labels.count(-1) == 0)
		throw Error("training labels must contain both classes");
	for (const auto& p : px) {
		if (p.label != 1 && p.label != -1)
			throw Error("training label must be +1 or -1");
		if (p.image < 0 || static_cast<std::size_t>(p.image) >= images.size() || !images[p.image].contains(p.x, p.y))
			throw Error("labelled pixel outside its training image");
	}

	std::vector<IntegralImage> integrals;
	integrals.reserve(images.size());
	for (const auto& img : images)
		integrals.emplace_back(img, feature_padding);

	const std::size_t n = px.size();
	std::vector<int> y(n);
	for (std::size_t i = 0; i < n; ++i)
		y[i] = px[i].label;
	std::vector<double> weights(n, 1.0 / static_cast<double>(n));
	std::vector<double> margins(n, 0.0);
	std::vector<double> signed_weights(n);

	auto evaluate_all = [&](const RectFeature& f, std::vector<double>& out) {
		out.resize(n);
		for (std::size_t i = 0; i < n; ++i)
			out[i] = f.evaluate(integrals[px[i].image], px[i].x, px[i].y);
	};

	TrainingResult result;
	for (int round = 0; round < opts.rounds; ++round) {
		std::vector<RectFeature> pool;
		pool.reserve(opts.candidate_pool);
		for (int c = 0; c < opts.candidate_pool; ++c)
			pool.push_back(next_feature());

		for (std::size_t i = 0; i < n; ++i)
			signed_weights[i] = y[i] * weights[i];
		std::vector<detail::StumpChoice> choices(pool.size());
		parallel_for(pool.size(), [&](std::size_t c) {
			thread_local std::vector<double> values;
			thread_local std::vector<detail::SortEntry> order, scratch;
			evaluate_all(pool[c], values);
			choices[c] = detail::best_stump(values, signed_weights, order, scratch);
		});
		std::size_t pick = 0;
		for (std::size_t c = 1; c < choices.size(); ++c)
			if (choices[c].error < choices[pick].error)
				pick = c;

		const auto& choice = choices[pick];
		// cumulative sums leave chance-level stumps a few ulp under 0.5
		if (!(choice.error < 0.5 - chance_tolerance)) {
			result.stopped_early = true;
			break;
		}
		const double err = std::max(choice.error, 1e-12);
		WeakClassifier wc{std::move(pool[pick]), choice.threshold, choice.polarity, 0.5 * std::log((1.0 - err) / err)};

		std::vector<double> values;
		evaluate_all(wc.feature, values);
		double total = 0.0, loss = 0.0;
		for (std::size_t i = 0; i < n; ++i) {
			const int h = wc.vote(values[i]);
			margins[i] += wc.alpha * h;
			weights[i] *= std::exp(-wc.alpha * y[i] * h);
			total += weights[i];
			loss += std::exp(-y[i] * margins[i]);
		}
		for (double& w : weights)
			w /= total;

		result.log.push_back({choice.error, loss / static_cast<double>(n)});
		result.classifier.rounds.push_back(std::move(wc));
	}
	return result;
}

template <class Rng>
TrainingResult train(const LabeledPixelSet& labels, std::span<const RasterImage> images, const TrainOptions& opts,
                     Rng& rng)
{
	return train_with(labels, images, opts, [&] { return sample_feature(rng); });
}

/// Classifier margin at every pixel; rectangles past the border read zero intensity.
inline RasterImage respond(const StrongClassifier& clf, const RasterImage& img)
{
	if (img.empty())
		throw Error("classifier applied to an empty raster");
	const IntegralImage ii(img, feature_padding);
	const int w = img.width();
	const int h = img.height();
	RasterImage out(w, h);

	parallel_for(static_cast<std::size_t>(h), [&](std::size_t row) {
		const int y = static_cast<int>(row);
		std::vector<double> value(w);
		auto dst = out.row(y);
		for (const auto& wc : clf.rounds) {
			std::fill(value.begin(), value.end(), 0.0);
			auto accumulate = [&](const Rect& r, double sign) {
				const double* top = ii.corner_row(y + r.y0) + feature_padding;
				const double* bottom = ii.corner_row(y + r.y1 + 1) + feature_padding;
				const int a = r.x0, b = r.x1 + 1;
				for (int x = 0; x < w; ++x)
					value[x] += sign * (bottom[x + b] - bottom[x + a] - top[x + b] + top[x + a]);
			};
			for (const Rect& r : wc.feature.positive)
				accumulate(r, 1.0);
			for (const Rect& r : wc.feature.negative)
				accumulate(r, -1.0);
			const double up = wc.alpha * wc.polarity;
			for (int x = 0; x < w; ++x)
				dst[x] += value[x] > wc.threshold ? up : -up;
		}
	});
	return out;
}

// Model file: one line per round,
//   alpha polarity threshold npos (x0 y0 x1 y1)*npos nneg (x0 y0 x1 y1)*nneg
// with inclusive rectangle corner offsets. Lines starting with '#' are comments.

inline void write_classifier(std::ostream& out, const StrongClassifier& clf)
{
	out << "# vfield strong classifier: alpha polarity threshold npos rects nneg rects\n";
	out << std::setprecision(17);
	auto rects = [&](const std::vector<Rect>& rs) {
		out << ' ' << rs.size();
		for (const Rect& r : rs)
			out << ' ' << r.x0 << ' ' << r.y0 << ' ' << r.x1 << ' ' << r.y1;
	};
	for (const auto& wc : clf.rounds) {
		out << wc.alpha << ' ' << wc.polarity << ' ' << wc.threshold;
		rects(wc.feature.positive);
		rects(wc.feature.negative);
		out << '\n';
	}
}

inline StrongClassifier read_classifier(std::istream& in)
{
	StrongClassifier clf;
	std::string line;
	int lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		if (line.empty() || line[0] == '#')
			continue;
		std::istringstream ls(line);
		WeakClassifier wc;
		auto fail = [&] { return Error("malformed classifier line " + std::to_string(lineno)); };
		auto rects = [&](std::vector<Rect>& rs) {
			int count = 0;
			if (!(ls >> count) || count < 1 || count > 5)
				throw fail();
			for (int i = 0; i < count; ++i) {
				Rect r;
				if (!(ls >> r.x0 >> r.y0 >> r.x1 >> r.y1) || r.x0 > r.x1 || r.y0 > r.y1)
					throw fail();
				for (int v : {r.x0, r.y0, r.x1, r.y1})
					if (std::abs(v) > max_feature_offset)
						throw fail();
				rs.push_back(r);
			}
		};
		if (!(ls >> wc.alpha >> wc.polarity >> wc.threshold) || (wc.polarity != 1 && wc.polarity != -1) ||
		    !(wc.alpha >= 0.0))
			throw fail();
		rects(wc.feature.positive);
		rects(wc.feature.negative);
		std::string rest;
		if (ls >> rest)
			throw fail();
		clf.rounds.push_back(std::move(wc));
	}
	return clf;
}

inline void write_classifier(const std::filesystem::path& path, const StrongClassifier& clf)
{
	std::ofstream out(path);
	if (!out)
		throw Error("cannot write " + path.string());
	write_classifier(out, clf);
}

inline StrongClassifier read_classifier(const std::filesystem::path& path)
{
	std::ifstream in(path);
	if (!in)
		throw Error("cannot open " + path.string());
	return read_classifier(in);
}

/// Label file: CSV "frame,x,y,label" with label 1 = car, 0 = background.
inline void write_labels(std::ostream& out, const LabeledPixelSet& labels)
{
	out << "frame,x,y,label\n";
	for (const auto& p : labels.pixels)
		out << p.image << ',' << p.x << ',' << p.y << ',' << (p.label > 0 ? 1 : 0) << '\n';
}

inline LabeledPixelSet read_labels(std::istream& in)
{
	LabeledPixelSet labels;
	std::string line;
	int lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		if (line.empty() || (lineno == 1 && line.rfind("frame", 0) == 0))
			continue;
		LabeledPixel p;
		char c1, c2, c3;
		int lab = 0;
		std::istringstream ls(line);
		if (!(ls >> p.image >> c1 >> p.x >> c2 >> p.y >> c3 >> lab) || c1 != ',' || c2 != ',' || c3 != ',' ||
		    (lab != 0 && lab != 1))
			throw Error("malformed label line " + std::to_string(lineno));
		p.label = lab == 1 ? 1 : -1;
		labels.pixels.push_back(p);
	}
	return labels;
}

} // namespace vfield

#endif
