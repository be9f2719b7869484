#include "skipdet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace skipdet {

namespace {

TensorD run_forward(const std::vector<Layer<double>*>& fragment, const TensorD& input) {
    TensorD x = input;
    for (auto* l : fragment) x = l->forward(x, /*train=*/true);
    return x;
}

}  // namespace

GradCheckLoss projection_loss(Rng rng) {
    auto coeffs = std::make_shared<std::vector<double>>();
    auto rng_copy = std::make_shared<Rng>(rng);
    return [coeffs, rng_copy](const TensorD& out, TensorD* grad_out) {
        if (coeffs->empty())
            for (std::size_t i = 0; i < out.numel(); ++i)
                coeffs->push_back(rng_copy->uniform(-1.0, 1.0));
        double loss = 0.0;
        for (std::size_t i = 0; i < out.numel(); ++i) loss += (*coeffs)[i] * out.data[i];
        if (grad_out) {
            *grad_out = TensorD(out.shape);
            for (std::size_t i = 0; i < out.numel(); ++i) grad_out->data[i] = (*coeffs)[i];
        }
        return loss;
    };
}

GradCheckLoss cross_entropy_loss(std::vector<int> targets) {
    return [targets](const TensorD& out, TensorD* grad_out) {
        int N = out.dim(0), K = out.dim(1);
        double loss = 0.0;
        if (grad_out) *grad_out = TensorD(out.shape);
        for (int n = 0; n < N; ++n) {
            double p = std::max(out.at(n, targets[std::size_t(n)]), 1e-12);
            loss -= std::log(p) / N;
            if (grad_out) grad_out->at(n, targets[std::size_t(n)]) = -1.0 / (p * N);
        }
        return loss;
    };
}

bool smooth_at(const std::vector<Layer<double>*>& fragment, const TensorD& input, double margin) {
    TensorD x = input;
    for (auto* l : fragment) {
        if (l->spec().kind == LayerKind::ReLU6)
            for (double v : x.data)
                if (std::abs(v) < margin || std::abs(v - 6.0) < margin) return false;
        x = l->forward(x, /*train=*/false);
    }
    return true;
}

GradCheckReport gradient_check(const std::vector<Layer<double>*>& fragment, const TensorD& input,
                               GradCheckLoss loss, double h, int max_per_tensor) {
    std::vector<ParamRef<double>> params;
    for (std::size_t i = 0; i < fragment.size(); ++i)
        fragment[i]->collect_params("layer" + std::to_string(i), params);
    for (auto& p : params) {
        p.tensor->ensure_grad();
        p.tensor->zero_grad();
    }

    TensorD out = run_forward(fragment, input);
    TensorD gout;
    loss(out, &gout);
    TensorD g = gout;
    for (auto it = fragment.rbegin(); it != fragment.rend(); ++it) g = (*it)->backward(g);

    GradCheckReport report;
    Rng pick(0x5eedu);
    for (auto& p : params) {
        std::vector<std::size_t> idx(p.tensor->numel());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (int(idx.size()) > max_per_tensor) {
            for (std::size_t i = 0; i < idx.size(); ++i)
                std::swap(idx[i], idx[std::size_t(pick.uniform_int(std::int64_t(i),
                                                                   std::int64_t(idx.size()) - 1))]);
            idx.resize(std::size_t(max_per_tensor));
        }
        double worst = 0.0;
        for (std::size_t i : idx) {
            double orig = p.tensor->data[i];
            p.tensor->data[i] = orig + h;
            double lp = loss(run_forward(fragment, input), nullptr);
            p.tensor->data[i] = orig - h;
            double lm = loss(run_forward(fragment, input), nullptr);
            p.tensor->data[i] = orig;
            double numeric = (lp - lm) / (2.0 * h);
            double analytic = p.tensor->grad[i];
            double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
        report.per_tensor.push_back({p.name, worst});
        report.max_rel_err = std::max(report.max_rel_err, worst);
    }
    return report;
}

}  // namespace skipdet
