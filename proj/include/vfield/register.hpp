#ifndef VFIELD_REGISTER_HPP
#define VFIELD_REGISTER_HPP

#include "vfield/parallel.hpp"
#include "vfield/raster.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

namespace vfield {

/// Bivariate quadratic c0 + c1 x + c2 y + c3 x^2 + c4 xy + c5 y^2.
struct Quadratic {
	std::array<double, 6> c{};

	double operator()(double x, double y) const
	{
		return c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y;
	}

	/// Coefficients of q(s*u + ox, s*v + oy) as a quadratic in (u, v).
	Quadratic substituted(double s, double ox, double oy) const
	{
		Quadratic r;
		r.c[0] = (*this)(ox, oy);
		r.c[1] = s * (c[1] + 2.0 * c[3] * ox + c[4] * oy);
		r.c[2] = s * (c[2] + c[4] * ox + 2.0 * c[5] * oy);
		r.c[3] = s * s * c[3];
		r.c[4] = s * s * c[4];
		r.c[5] = s * s * c[5];
		return r;
	}

	Quadratic operator*(double k) const
	{
		Quadratic r = *this;
		for (double& v : r.c)
			v *= k;
		return r;
	}

	Quadratic operator+(const Quadratic& o) const
	{
		Quadratic r = *this;
		for (std::size_t i = 0; i < 6; ++i)
			r.c[i] += o.c[i];
		return r;
	}

	/// Exact minimum over the box [lo, hi]: corners, edge vertices and the interior stationary point.
	double min_over_box(Point2 lo, Point2 hi) const
	{
		double best = std::numeric_limits<double>::infinity();
		auto consider = [&](double x, double y) {
			if (x >= lo.x && x <= hi.x && y >= lo.y && y <= hi.y)
				best = std::min(best, (*this)(x, y));
		};
		for (double x : {lo.x, hi.x})
			for (double y : {lo.y, hi.y})
				consider(x, y);
		if (c[3] != 0.0)
			for (double y : {lo.y, hi.y})
				consider(-(c[1] + c[4] * y) / (2.0 * c[3]), y);
		if (c[5] != 0.0)
			for (double x : {lo.x, hi.x})
				consider(x, -(c[2] + c[4] * x) / (2.0 * c[5]));
		const double det = 4.0 * c[3] * c[5] - c[4] * c[4];
		if (det != 0.0)
			consider((c[4] * c[2] - 2.0 * c[5] * c[1]) / det, (c[4] * c[1] - 2.0 * c[3] * c[2]) / det);
		return best;
	}
};

/// Denominators at or below this value count as a pole.
inline constexpr double pole_epsilon = 1e-9;

/**
 * Second-order rational image mapping
 *
 *     x' = P1(x, y) / Q(x, y),   y' = P2(x, y) / Q(x, y)
 *
 * with full quadratics P1, P2, Q and Q's constant term fixed to 1. The 17
 * coefficients are stored as
 *
 *     a0..a5 (P1), b0..b5 (P2), c1..c5 (Q)
 *
 * each in monomial order 1, x, y, x^2, xy, y^2 (Q skips the constant).
 * With all quadratic terms zero this is a homography.
 */
struct PolyprojectiveTransform {
	std::array<double, 17> coef{};

	static PolyprojectiveTransform identity()
	{
		PolyprojectiveTransform t;
		t.coef[1] = 1.0; // a1: x
		t.coef[8] = 1.0; // b2: y
		return t;
	}

	/// From a row-major 3x3 homography; h[8] must be nonzero.
	static PolyprojectiveTransform from_homography(const std::array<double, 9>& h)
	{
		if (h[8] == 0.0)
			throw Error("homography with zero h33 cannot be normalized");
		PolyprojectiveTransform t;
		const double k = 1.0 / h[8];
		t.coef[0] = h[2] * k;
		t.coef[1] = h[0] * k;
		t.coef[2] = h[1] * k;
		t.coef[6] = h[5] * k;
		t.coef[7] = h[3] * k;
		t.coef[8] = h[4] * k;
		t.coef[12] = h[6] * k;
		t.coef[13] = h[7] * k;
		return t;
	}

	static PolyprojectiveTransform from_polynomials(const Quadratic& p1, const Quadratic& p2, const Quadratic& q)
	{
		const double k = q.c[0];
		if (!(std::abs(k) > pole_epsilon))
			throw Error("rational transform cannot be normalized: Q vanishes at the origin");
		PolyprojectiveTransform t;
		for (int i = 0; i < 6; ++i) {
			t.coef[i] = p1.c[i] / k;
			t.coef[6 + i] = p2.c[i] / k;
		}
		for (int i = 1; i < 6; ++i)
			t.coef[11 + i] = q.c[i] / k;
		return t;
	}

	Quadratic p1() const { return {{coef[0], coef[1], coef[2], coef[3], coef[4], coef[5]}}; }
	Quadratic p2() const { return {{coef[6], coef[7], coef[8], coef[9], coef[10], coef[11]}}; }
	Quadratic q() const { return {{1.0, coef[12], coef[13], coef[14], coef[15], coef[16]}}; }

	std::optional<Point2> try_apply(Point2 p) const
	{
		const double den = q()(p.x, p.y);
		if (!(den > pole_epsilon))
			return std::nullopt;
		return Point2{p1()(p.x, p.y) / den, p2()(p.x, p.y) / den};
	}

	Point2 apply(Point2 p) const
	{
		if (auto r = try_apply(p))
			return *r;
		throw Error("transform denominator vanishes (pole) at the evaluated point");
	}

	friend bool operator==(const PolyprojectiveTransform&, const PolyprojectiveTransform&) = default;
};

struct Correspondence {
	Point2 source;
	Point2 target;
	double weight = 1.0;
};

/// Points needed to fit 17 parameters, two equations per point.
inline constexpr std::size_t min_polyprojective_points = 9;

/// Similarity used to condition coordinates: u = (x - centre) / scale.
struct Normalization {
	Point2 centre;
	double scale = 1.0;

	static Normalization of(std::span<const Point2> pts)
	{
		Normalization n;
		if (pts.empty())
			return n;
		for (Point2 p : pts)
			n.centre = n.centre + p;
		n.centre = (1.0 / static_cast<double>(pts.size())) * n.centre;
		double ss = 0.0;
		for (Point2 p : pts) {
			const Point2 d = p - n.centre;
			ss += d.x * d.x + d.y * d.y;
		}
		const double rms = std::sqrt(ss / (2.0 * static_cast<double>(pts.size())));
		n.scale = rms > 1e-12 ? rms : 1.0;
		return n;
	}
};

/// Re-expresses `t` between normalized coordinates: u -> Tn(u) with x = s*u + c on both sides.
inline PolyprojectiveTransform to_normalized(const PolyprojectiveTransform& t, const Normalization& src,
                                             const Normalization& dst)
{
	const Quadratic q = t.q().substituted(src.scale, src.centre.x, src.centre.y);
	const Quadratic p1 = (t.p1().substituted(src.scale, src.centre.x, src.centre.y) + q * -dst.centre.x) *
	                     (1.0 / dst.scale);
	const Quadratic p2 = (t.p2().substituted(src.scale, src.centre.x, src.centre.y) + q * -dst.centre.y) *
	                     (1.0 / dst.scale);
	return PolyprojectiveTransform::from_polynomials(p1, p2, q);
}

inline PolyprojectiveTransform from_normalized(const PolyprojectiveTransform& tn, const Normalization& src,
                                               const Normalization& dst)
{
	const double inv = 1.0 / src.scale;
	const double ox = -src.centre.x * inv, oy = -src.centre.y * inv;
	const Quadratic q = tn.q().substituted(inv, ox, oy);
	const Quadratic p1 = tn.p1().substituted(inv, ox, oy) * dst.scale + q * dst.centre.x;
	const Quadratic p2 = tn.p2().substituted(inv, ox, oy) * dst.scale + q * dst.centre.y;
	return PolyprojectiveTransform::from_polynomials(p1, p2, q);
}

struct NelderMeadOptions {
	int max_iterations = 20000;
	double relative_tolerance = 1e-10;
	double absolute_tolerance = 1e-20;
};

struct NelderMeadResult {
	std::vector<double> x;
	double value = 0.0;
	int iterations = 0;
	bool converged = false;
	std::vector<double> best_history; // best vertex value after each iteration
};

/**
 * Downhill simplex minimization with dimension-adaptive coefficients
 * (reflection 1, expansion 1 + 2/n, contraction 3/4 - 1/(2n), shrink 1 - 1/n).
 * The initial simplex is x0 plus one vertex per coordinate offset by steps[i].
 * Stops when the spread of vertex values falls below
 * relative_tolerance * (|f_best| + |f_worst|) / 2 + absolute_tolerance.
 */
template <class Objective>
NelderMeadResult nelder_mead(Objective&& f, std::vector<double> x0, std::span<const double> steps,
                             const NelderMeadOptions& opts = {})
{
	const std::size_t n = x0.size();
	if (n == 0 || steps.size() != n)
		throw Error("simplex dimension mismatch");
	const double dn = static_cast<double>(n);
	const double reflect = 1.0, expand = 1.0 + 2.0 / dn, contract = 0.75 - 0.5 / dn, shrink = 1.0 - 1.0 / dn;

	auto eval = [&](const std::vector<double>& x) {
		const double v = f(std::span<const double>(x));
		return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
	};

	std::vector<std::vector<double>> pts(n + 1, x0);
	std::vector<double> vals(n + 1);
	for (std::size_t i = 0; i < n; ++i)
		pts[i + 1][i] += steps[i];
	for (std::size_t i = 0; i <= n; ++i)
		vals[i] = eval(pts[i]);

	std::vector<std::size_t> order(n + 1);
	std::vector<double> centroid(n), trial(n), trial2(n);
	NelderMeadResult res;
	auto sort_vertices = [&] {
		std::iota(order.begin(), order.end(), 0);
		std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
	};
	auto along = [&](double t, std::vector<double>& out, const std::vector<double>& worst) {
		for (std::size_t k = 0; k < n; ++k)
			out[k] = centroid[k] + t * (centroid[k] - worst[k]);
	};

	sort_vertices();
	while (res.iterations < opts.max_iterations) {
		const double best = vals[order.front()], worst = vals[order.back()];
		if (std::isfinite(worst) &&
		    worst - best <= opts.relative_tolerance * 0.5 * (std::abs(best) + std::abs(worst)) + opts.absolute_tolerance) {
			res.converged = true;
			break;
		}
		++res.iterations;

		std::fill(centroid.begin(), centroid.end(), 0.0);
		for (std::size_t i = 0; i < n; ++i)
			for (std::size_t k = 0; k < n; ++k)
				centroid[k] += pts[order[i]][k] / dn;

		const std::size_t w = order.back();
		const double second_worst = vals[order[n - 1]];
		along(reflect, trial, pts[w]);
		const double fr = eval(trial);
		if (fr < best) {
			along(expand, trial2, pts[w]);
			const double fe = eval(trial2);
			if (fe < fr) {
				pts[w] = trial2;
				vals[w] = fe;
			} else {
				pts[w] = trial;
				vals[w] = fr;
			}
		} else if (fr < second_worst) {
			pts[w] = trial;
			vals[w] = fr;
		} else {
			const bool outside = fr < vals[w];
			along(outside ? contract : -contract, trial2, pts[w]);
			const double fc = eval(trial2);
			if (fc < (outside ? fr : vals[w])) {
				pts[w] = trial2;
				vals[w] = fc;
			} else {
				const auto& b = pts[order.front()];
				for (std::size_t i = 1; i <= n; ++i) {
					auto& p = pts[order[i]];
					for (std::size_t k = 0; k < n; ++k)
						p[k] = b[k] + shrink * (p[k] - b[k]);
					vals[order[i]] = eval(p);
				}
			}
		}
		sort_vertices();
		res.best_history.push_back(vals[order.front()]);
	}
	res.x = pts[order.front()];
	res.value = vals[order.front()];
	return res;
}

/// Weighted sum of squared transfer errors; infinite if any source point hits a pole.
inline double transfer_sse(const PolyprojectiveTransform& t, std::span<const Correspondence> corrs)
{
	double sse = 0.0;
	for (const auto& c : corrs) {
		const auto p = t.try_apply(c.source);
		if (!p)
			return std::numeric_limits<double>::infinity();
		const Point2 d = *p - c.target;
		sse += c.weight * (d.x * d.x + d.y * d.y);
	}
	return sse;
}

struct SseFit {
	PolyprojectiveTransform transform;
	double sse = 0.0;
	int iterations = 0;
	std::vector<double> best_history;
};

struct FitOptions {
	NelderMeadOptions simplex{};
	double step_scale = 1e-3; // initial simplex offset relative to max(|param|, 1)
	Point2 domain{};          // far corner of the source image, if known
};

/**
 * Least-squares fit of a polyprojective transform by downhill simplex,
 * starting from `init`. The search runs on coordinates conditioned by
 * centroid and RMS spread of each point set; the result is mapped back to
 * pixel coordinates. Candidates whose denominator is non-positive anywhere in
 * the box spanning the origin, the source points and `domain` are rejected.
 * Converged simplexes are restarted around the best vertex while they keep
 * improving, within the one iteration budget.
 */
inline SseFit fit_sse(std::span<const Correspondence> corrs, const PolyprojectiveTransform& init,
                      const FitOptions& opts = {})
{
	if (corrs.size() < min_polyprojective_points)
		throw Error("polyprojective fit needs at least 9 correspondences, got " + std::to_string(corrs.size()));
	std::vector<Point2> src, dst;
	for (const auto& c : corrs) {
		if (!std::isfinite(c.source.x) || !std::isfinite(c.source.y) || !std::isfinite(c.target.x) ||
		    !std::isfinite(c.target.y) || !(c.weight >= 0.0))
			throw Error("correspondences must be finite with non-negative weights");
		src.push_back(c.source);
		dst.push_back(c.target);
	}
	const auto ns = Normalization::of(src);
	const auto nd = Normalization::of(dst);
	std::vector<Correspondence> normalized(corrs.size());
	for (std::size_t i = 0; i < corrs.size(); ++i)
		normalized[i] = {(1.0 / ns.scale) * (corrs[i].source - ns.centre),
		                 (1.0 / nd.scale) * (corrs[i].target - nd.centre), corrs[i].weight};

	// Q must stay positive over the source domain: the box from the pixel origin,
	// where Q is pinned to 1, out to the image corner or the farthest source point
	Point2 box_lo{0.0, 0.0}, box_hi = opts.domain;
	for (Point2 p : src) {
		box_lo = {std::min(box_lo.x, p.x), std::min(box_lo.y, p.y)};
		box_hi = {std::max(box_hi.x, p.x), std::max(box_hi.y, p.y)};
	}
	box_lo = (1.0 / ns.scale) * (box_lo - ns.centre);
	box_hi = (1.0 / ns.scale) * (box_hi - ns.centre);

	const double px2 = nd.scale * nd.scale;
	auto objective = [&](std::span<const double> x) {
		PolyprojectiveTransform t;
		std::copy(x.begin(), x.end(), t.coef.begin());
		if (!(t.q().min_over_box(box_lo, box_hi) > pole_epsilon))
			return std::numeric_limits<double>::infinity();
		return px2 * transfer_sse(t, normalized);
	};

	const auto start = to_normalized(init, ns, nd);
	std::vector<double> x(start.coef.begin(), start.coef.end());
	double value = objective(x);
	SseFit fit;
	int budget = opts.simplex.max_iterations;
	while (budget > 0) {
		std::vector<double> steps(x.size());
		for (std::size_t k = 0; k < x.size(); ++k)
			steps[k] = opts.step_scale * std::max(std::abs(x[k]), 1.0);
		NelderMeadOptions nm = opts.simplex;
		nm.max_iterations = budget;
		auto r = nelder_mead(objective, x, steps, nm);
		budget -= r.iterations;
		fit.iterations += r.iterations;
		for (double v : r.best_history)
			fit.best_history.push_back(std::min(v, value));
		const bool improved = r.value < value - 1e-9 * std::abs(value) - nm.absolute_tolerance;
		if (r.value < value) {
			x = r.x;
			value = r.value;
		}
		if (!r.converged || !improved)
			break;
	}

	PolyprojectiveTransform tn;
	std::copy(x.begin(), x.end(), tn.coef.begin());
	fit.transform = from_normalized(tn, ns, nd);
	fit.sse = transfer_sse(fit.transform, corrs);
	return fit;
}

struct CaseDeletionOptions {
	double drop_fraction = 0.05;
	double target_mean_error = 2.0; // px
	int max_rounds = 40;
	std::size_t min_points = min_polyprojective_points;
};

enum class FitStatus { converged, too_few_points, round_limit };

template <class Model>
struct CaseDeletionResult {
	Model model;
	std::vector<std::size_t> survivors;    // indices into the input, ascending
	std::vector<std::size_t> deleted;      // in deletion order, worst first within a round
	std::vector<double> mean_residuals;    // survivor mean residual after each fit
	FitStatus status = FitStatus::converged;

	bool converged() const { return status == FitStatus::converged; }
	double mean_residual() const { return mean_residuals.empty() ? 0.0 : mean_residuals.back(); }
};

/**
 * Robust fitting by case deletion: fit, and while the mean residual of the
 * surviving points is not below the target, delete the ceil(drop_fraction)
 * worst of them and refit starting from the previous model.
 *
 * `fit(indices, warm_start) -> Model` and `residual(model, index) -> double`.
 * Gives up, keeping the last fit, when a deletion would leave fewer than
 * `min_points` or after `max_rounds` fits.
 */
template <class Model, class Fit, class Residual>
CaseDeletionResult<Model> case_deletion(std::size_t count, Model init, Fit&& fit, Residual&& residual,
                                        const CaseDeletionOptions& opts)
{
	if (count < opts.min_points)
		throw Error("case deletion needs at least " + std::to_string(opts.min_points) + " points");
	if (!(opts.drop_fraction > 0.0 && opts.drop_fraction < 1.0) || opts.max_rounds <= 0)
		throw Error("invalid case deletion options");

	CaseDeletionResult<Model> res;
	res.model = std::move(init);
	res.survivors.resize(count);
	std::iota(res.survivors.begin(), res.survivors.end(), std::size_t{0});

	std::vector<std::pair<double, std::size_t>> ranked;
	for (int round = 1;; ++round) {
		res.model = fit(std::span<const std::size_t>(res.survivors), res.model);
		ranked.clear();
		double total = 0.0;
		for (std::size_t i : res.survivors) {
			double r = residual(res.model, i);
			if (std::isnan(r))
				r = std::numeric_limits<double>::infinity();
			ranked.emplace_back(r, i);
			total += r;
		}
		const double mean = total / static_cast<double>(ranked.size());
		res.mean_residuals.push_back(mean);
		if (mean < opts.target_mean_error) {
			res.status = FitStatus::converged;
			return res;
		}
		if (round >= opts.max_rounds) {
			res.status = FitStatus::round_limit;
			return res;
		}
		const auto drop = static_cast<std::size_t>(
		    std::ceil(opts.drop_fraction * static_cast<double>(res.survivors.size()) - 1e-12));
		if (res.survivors.size() - drop < opts.min_points) {
			res.status = FitStatus::too_few_points;
			return res;
		}
		std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
		for (std::size_t k = 0; k < drop; ++k)
			res.deleted.push_back(ranked[k].second);
		ranked.erase(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(drop));
		res.survivors.clear();
		for (const auto& r : ranked)
			res.survivors.push_back(r.second);
		std::sort(res.survivors.begin(), res.survivors.end());
	}
}

inline double transfer_error(const PolyprojectiveTransform& t, const Correspondence& c)
{
	const auto p = t.try_apply(c.source);
	return p ? norm(*p - c.target) : std::numeric_limits<double>::infinity();
}

/// Case-deletion polyprojective fit with the simplex SSE fit as the inner solver.
inline CaseDeletionResult<PolyprojectiveTransform> case_deletion_fit(std::span<const Correspondence> corrs,
                                                                     const PolyprojectiveTransform& init,
                                                                     const CaseDeletionOptions& opts = {},
                                                                     const FitOptions& fit_opts = {})
{
	if (corrs.size() < min_polyprojective_points)
		throw Error("polyprojective fit needs at least 9 correspondences, got " + std::to_string(corrs.size()));
	std::vector<Correspondence> subset;
	return case_deletion(
	    corrs.size(), init,
	    [&](std::span<const std::size_t> idx, const PolyprojectiveTransform& warm) {
		    subset.clear();
		    for (std::size_t i : idx)
			    subset.push_back(corrs[i]);
		    return fit_sse(subset, warm, fit_opts).transform;
	    },
	    [&](const PolyprojectiveTransform& t, std::size_t i) { return transfer_error(t, corrs[i]); }, opts);
}

struct NccMatch {
	Pixel offset; // top-left of the best patch placement inside the region
	double score = -1.0;
};

/**
 * Exhaustive zero-normalized cross correlation of `patch` over every
 * placement inside `region`. Placements with a constant window are skipped.
 * Throws for a constant patch, a region smaller than the patch, or when no
 * placement has any variance.
 */
inline NccMatch ncc_match(const RasterImage& patch, const RasterImage& region)
{
	const int pw = patch.width(), ph = patch.height();
	if (patch.empty() || region.width() < pw || region.height() < ph)
		throw Error("search region must contain the patch");
	const double n = static_cast<double>(patch.size());
	double mean_p = 0.0;
	for (double v : patch.pixels())
		mean_p += v;
	mean_p /= n;
	std::vector<double> centred(patch.size());
	double var_p = 0.0;
	for (std::size_t i = 0; i < centred.size(); ++i) {
		centred[i] = patch.pixels()[i] - mean_p;
		var_p += centred[i] * centred[i];
	}
	if (!(var_p > 1e-12 * n))
		throw Error("patch has zero variance");

	NccMatch best;
	bool found = false;
	for (int oy = 0; oy + ph <= region.height(); ++oy)
		for (int ox = 0; ox + pw <= region.width(); ++ox) {
			double sum = 0.0, sum2 = 0.0, cross = 0.0;
			for (int y = 0; y < ph; ++y) {
				const double* r = region.row(oy + y).data() + ox;
				const double* p = centred.data() + static_cast<std::size_t>(y) * pw;
				for (int x = 0; x < pw; ++x) {
					sum += r[x];
					sum2 += r[x] * r[x];
					cross += p[x] * r[x];
				}
			}
			const double var_r = sum2 - sum * sum / n;
			if (!(var_r > 1e-12 * n))
				continue;
			const double score = cross / std::sqrt(var_p * var_r);
			if (!found || score > best.score) {
				best = {{ox, oy}, score};
				found = true;
			}
		}
	if (!found)
		throw Error("search region has no textured placement");
	return best;
}

/// Copy of the w x h window at (x0, y0); nullopt if it leaves the image.
inline std::optional<RasterImage> crop(const RasterImage& img, int x0, int y0, int w, int h)
{
	if (x0 < 0 || y0 < 0 || x0 + w > img.width() || y0 + h > img.height() || w <= 0 || h <= 0)
		return std::nullopt;
	RasterImage out(w, h);
	for (int y = 0; y < h; ++y) {
		const auto src = img.row(y0 + y);
		std::copy(src.begin() + x0, src.begin() + x0 + w, out.row(y).begin());
	}
	return out;
}

struct GridMatchOptions {
	int spacing = 50;
	int patch_size = 75;
	int search_radius = 10; // px around the predicted position
	double min_score = 0.5;
};

/**
 * Correspondences on a square grid of source points: each patch around a
 * grid point is searched by NCC in the target around the position predicted
 * by `predict`. Untextured, out-of-bounds and low-score grid points are dropped.
 */
inline std::vector<Correspondence> grid_correspondences(const RasterImage& source, const RasterImage& target,
                                                        const PolyprojectiveTransform& predict,
                                                        const GridMatchOptions& opts = {})
{
	if (opts.spacing <= 0 || opts.patch_size <= 0 || opts.search_radius < 0)
		throw Error("invalid grid match options");
	const int half = opts.patch_size / 2;
	std::vector<Pixel> grid;
	for (int y = half; y + opts.patch_size - half <= source.height(); y += opts.spacing)
		for (int x = half; x + opts.patch_size - half <= source.width(); x += opts.spacing)
			grid.push_back({x, y});

	std::vector<std::optional<Correspondence>> found(grid.size());
	parallel_for(grid.size(), [&](std::size_t i) {
		const Pixel g = grid[i];
		const auto patch = crop(source, g.x - half, g.y - half, opts.patch_size, opts.patch_size);
		const auto guess = predict.try_apply({static_cast<double>(g.x), static_cast<double>(g.y)});
		if (!patch || !guess)
			return;
		const int rx = static_cast<int>(std::lround(guess->x)) - half - opts.search_radius;
		const int ry = static_cast<int>(std::lround(guess->y)) - half - opts.search_radius;
		const int size = opts.patch_size + 2 * opts.search_radius;
		const auto region = crop(target, rx, ry, size, size);
		if (!region)
			return;
		try {
			const auto m = ncc_match(*patch, *region);
			if (m.score >= opts.min_score)
				found[i] = Correspondence{{static_cast<double>(g.x), static_cast<double>(g.y)},
				                          {static_cast<double>(rx + m.offset.x + half),
				                           static_cast<double>(ry + m.offset.y + half)},
				                          1.0};
		} catch (const Error&) {
			// untextured grid point: unmatched
		}
	});
	std::vector<Correspondence> out;
	for (auto& f : found)
		if (f)
			out.push_back(*f);
	return out;
}

/**
 * One displacement vector per square cell, evaluated anywhere by bilinear
 * interpolation between cell centres (held constant beyond the outer centres).
 */
class DisplacementField {
public:
	DisplacementField() = default;

	DisplacementField(int width, int height, int cell_size)
	    : width_(width), height_(height), cell_(cell_size)
	{
		if (width <= 0 || height <= 0 || cell_size <= 0)
			throw Error("displacement field dimensions must be positive");
		cols_ = (width + cell_size - 1) / cell_size;
		rows_ = (height + cell_size - 1) / cell_size;
		vectors_.assign(static_cast<std::size_t>(cols_ * rows_), Point2{});
		inherited_.assign(vectors_.size(), false);
	}

	int width() const { return width_; }
	int height() const { return height_; }
	int cell_size() const { return cell_; }
	int columns() const { return cols_; }
	int rows() const { return rows_; }

	Point2 cell_centre(int i, int j) const { return {(i + 0.5) * cell_, (j + 0.5) * cell_}; }

	Point2& vector(int i, int j) { return vectors_[static_cast<std::size_t>(j * cols_ + i)]; }
	Point2 vector(int i, int j) const { return vectors_[static_cast<std::size_t>(j * cols_ + i)]; }

	/// True when the cell had no matches and copied its nearest matched neighbour.
	bool inherited(int i, int j) const { return inherited_[static_cast<std::size_t>(j * cols_ + i)]; }
	void set_inherited(int i, int j, bool v) { inherited_[static_cast<std::size_t>(j * cols_ + i)] = v; }

	Point2 at(Point2 p) const
	{
		const double gx = std::clamp(p.x / cell_ - 0.5, 0.0, static_cast<double>(cols_ - 1));
		const double gy = std::clamp(p.y / cell_ - 0.5, 0.0, static_cast<double>(rows_ - 1));
		const int i0 = std::min(static_cast<int>(gx), cols_ - 1), j0 = std::min(static_cast<int>(gy), rows_ - 1);
		const int i1 = std::min(i0 + 1, cols_ - 1), j1 = std::min(j0 + 1, rows_ - 1);
		const double fx = gx - i0, fy = gy - j0;
		auto lerp = [](Point2 a, Point2 b, double t) { return (1.0 - t) * a + t * b; };
		return lerp(lerp(vector(i0, j0), vector(i1, j0), fx), lerp(vector(i0, j1), vector(i1, j1), fx), fy);
	}

private:
	int width_ = 0, height_ = 0, cell_ = 0, cols_ = 0, rows_ = 0;
	std::vector<Point2> vectors_;
	std::vector<bool> inherited_;
};

/// Case-deletion options for single-vector cell fits.
inline CaseDeletionOptions displacement_cell_defaults()
{
	CaseDeletionOptions o;
	o.target_mean_error = 0.5;
	o.min_points = 1;
	return o;
}

/**
 * Robust per-cell displacement (target - source) of matches binned by source
 * position. Each cell's vector is the case-deletion fit of a constant
 * displacement, whose least-squares solution is the weighted mean.
 * Cells without matches take the vector of the nearest matched cell.
 */
inline DisplacementField build_displacement_field(std::span<const Correspondence> matches, int width, int height,
                                                  int cell_size = 200,
                                                  const CaseDeletionOptions& opts = displacement_cell_defaults())
{
	DisplacementField field(width, height, cell_size);
	std::vector<std::vector<Point2>> cells(static_cast<std::size_t>(field.columns() * field.rows()));
	std::vector<std::vector<double>> weights(cells.size());
	for (const auto& m : matches) {
		if (!(m.source.x >= 0.0 && m.source.y >= 0.0 && m.source.x < width && m.source.y < height))
			continue;
		const int i = std::min(static_cast<int>(m.source.x) / cell_size, field.columns() - 1);
		const int j = std::min(static_cast<int>(m.source.y) / cell_size, field.rows() - 1);
		cells[static_cast<std::size_t>(j * field.columns() + i)].push_back(m.target - m.source);
		weights[static_cast<std::size_t>(j * field.columns() + i)].push_back(m.weight);
	}

	std::vector<bool> solved(cells.size(), false);
	for (std::size_t c = 0; c < cells.size(); ++c) {
		const auto& d = cells[c];
		if (d.empty())
			continue;
		const auto& w = weights[c];
		auto res = case_deletion(
		    d.size(), Point2{},
		    [&](std::span<const std::size_t> idx, const Point2&) {
			    Point2 sum;
			    double total = 0.0;
			    for (std::size_t k : idx) {
				    sum = sum + w[k] * d[k];
				    total += w[k];
			    }
			    if (!(total > 0.0)) {
				    sum = {};
				    for (std::size_t k : idx)
					    sum = sum + d[k];
				    total = static_cast<double>(idx.size());
			    }
			    return (1.0 / total) * sum;
		    },
		    [&](const Point2& v, std::size_t k) { return norm(d[k] - v); }, opts);
		field.vector(static_cast<int>(c) % field.columns(), static_cast<int>(c) / field.columns()) = res.model;
		solved[c] = true;
	}
	if (std::none_of(solved.begin(), solved.end(), [](bool b) { return b; }))
		throw Error("no cell of the displacement field has any match");

	for (int j = 0; j < field.rows(); ++j)
		for (int i = 0; i < field.columns(); ++i) {
			if (solved[static_cast<std::size_t>(j * field.columns() + i)])
				continue;
			double best = std::numeric_limits<double>::infinity();
			Point2 v;
			for (int jj = 0; jj < field.rows(); ++jj)
				for (int ii = 0; ii < field.columns(); ++ii) {
					if (!solved[static_cast<std::size_t>(jj * field.columns() + ii)])
						continue;
					const double d2 = double(ii - i) * (ii - i) + double(jj - j) * (jj - j);
					if (d2 < best) {
						best = d2;
						v = field.vector(ii, jj);
					}
				}
			field.vector(i, j) = v;
			field.set_inherited(i, j, true);
		}
	return field;
}

// Correspondence file: CSV "sx,sy,tx,ty[,w]", optional header line.

inline std::vector<Correspondence> read_correspondences(std::istream& in)
{
	std::vector<Correspondence> out;
	std::string line;
	int lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		if (line.empty() || line[0] == '#' || (lineno == 1 && line.rfind("sx", 0) == 0))
			continue;
		std::replace(line.begin(), line.end(), ',', ' ');
		std::istringstream ls(line);
		Correspondence c;
		if (!(ls >> c.source.x >> c.source.y >> c.target.x >> c.target.y))
			throw Error("malformed correspondence line " + std::to_string(lineno));
		if (!(ls >> c.weight))
			c.weight = 1.0;
		out.push_back(c);
	}
	return out;
}

inline void write_correspondences(std::ostream& out, std::span<const Correspondence> corrs)
{
	out << "sx,sy,tx,ty,w\n" << std::setprecision(17);
	for (const auto& c : corrs)
		out << c.source.x << ',' << c.source.y << ',' << c.target.x << ',' << c.target.y << ',' << c.weight << '\n';
}

// Transform file: comment lines, then the 17 coefficients a0..a5 b0..b5 c1..c5.

inline void write_transform(std::ostream& out, const PolyprojectiveTransform& t)
{
	out << "# x' = (a0 + a1 x + a2 y + a3 x^2 + a4 xy + a5 y^2) / Q\n"
	    << "# y' = (b0 + b1 x + b2 y + b3 x^2 + b4 xy + b5 y^2) / Q\n"
	    << "# Q  = 1 + c1 x + c2 y + c3 x^2 + c4 xy + c5 y^2\n"
	    << "# a0 a1 a2 a3 a4 a5 b0 b1 b2 b3 b4 b5 c1 c2 c3 c4 c5\n"
	    << std::setprecision(17);
	for (std::size_t i = 0; i < t.coef.size(); ++i)
		out << t.coef[i] << (i + 1 == t.coef.size() ? '\n' : ' ');
}

inline PolyprojectiveTransform read_transform(std::istream& in)
{
	PolyprojectiveTransform t;
	std::string line, body;
	while (std::getline(in, line))
		if (!line.empty() && line[0] != '#')
			body += line + ' ';
	std::istringstream ls(body);
	for (double& c : t.coef)
		if (!(ls >> c))
			throw Error("transform file must hold 17 coefficients");
	std::string extra;
	if (ls >> extra)
		throw Error("transform file has more than 17 coefficients");
	return t;
}

// Displacement field file: "# width height cell_size" line, then CSV "cell_i,cell_j,dx,dy".

inline void write_displacement_field(std::ostream& out, const DisplacementField& f)
{
	out << "# " << f.width() << ' ' << f.height() << ' ' << f.cell_size() << '\n'
	    << "cell_i,cell_j,dx,dy\n"
	    << std::setprecision(17);
	for (int j = 0; j < f.rows(); ++j)
		for (int i = 0; i < f.columns(); ++i)
			out << i << ',' << j << ',' << f.vector(i, j).x << ',' << f.vector(i, j).y << '\n';
}

inline DisplacementField read_displacement_field(std::istream& in)
{
	std::string line;
	if (!std::getline(in, line) || line.rfind("#", 0) != 0)
		throw Error("displacement field file lacks its size line");
	std::istringstream hs(line.substr(1));
	int w = 0, h = 0, cell = 0;
	if (!(hs >> w >> h >> cell))
		throw Error("malformed displacement field size line");
	DisplacementField f(w, h, cell);
	while (std::getline(in, line)) {
		if (line.empty() || line.rfind("cell", 0) == 0)
			continue;
		std::replace(line.begin(), line.end(), ',', ' ');
		std::istringstream ls(line);
		int i = 0, j = 0;
		Point2 v;
		if (!(ls >> i >> j >> v.x >> v.y) || i < 0 || j < 0 || i >= f.columns() || j >= f.rows())
			throw Error("malformed displacement field line");
		f.vector(i, j) = v;
	}
	return f;
}

} // namespace vfield

#endif
