#include "nn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dfkd {
namespace nn {

namespace {
const Tensor& blob_get(const std::map<std::string, Tensor>& blob, const std::string& key) {
    auto it = blob.find(key);
    if (it == blob.end()) throw std::runtime_error("optimizer state is missing '" + key + "'");
    return it->second;
}
} // namespace

Sgd::Sgd(std::vector<Parameter*> params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    velocity_.reserve(params_.size());
    for (Parameter* p : params_) velocity_.emplace_back(p->value.shape(), 0.0);
}

void Sgd::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

void Sgd::step() {
    for (size_t i = 0; i < params_.size(); ++i) {
        Parameter* p = params_[i];
        double* w = p->value.data();
        const double* g = p->grad.data();
        double* v = velocity_[i].data();
        for (int64_t k = 0; k < p->value.numel(); ++k) {
            double gk = g[k] + weight_decay_ * w[k];
            v[k] = momentum_ * v[k] + gk;
            w[k] -= lr_ * v[k];
        }
        p->version++;
    }
}

void Sgd::save(BlobWriter& w, const std::string& prefix) const {
    for (size_t i = 0; i < params_.size(); ++i)
        w.add(prefix + ".v." + params_[i]->name, velocity_[i]);
}

void Sgd::load(const std::map<std::string, Tensor>& blob, const std::string& prefix) {
    for (size_t i = 0; i < params_.size(); ++i) {
        const Tensor& t = blob_get(blob, prefix + ".v." + params_[i]->name);
        if (!t.same_shape(velocity_[i]))
            throw std::runtime_error("optimizer state shape mismatch for " + params_[i]->name);
        velocity_[i] = t;
    }
}

Adam::Adam(std::vector<Parameter*> params, double lr, double beta1, double beta2, double eps,
           double weight_decay, bool decoupled_decay)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      weight_decay_(weight_decay), decoupled_(decoupled_decay) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.shape(), 0.0);
        v_.emplace_back(p->value.shape(), 0.0);
    }
}

void Adam::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

void Adam::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Parameter* p = params_[i];
        double* w = p->value.data();
        const double* g = p->grad.data();
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (int64_t k = 0; k < p->value.numel(); ++k) {
            double gk = g[k];
            if (!decoupled_) gk += weight_decay_ * w[k];
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * gk;
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
            double mhat = m[k] / bc1;
            double vhat = v[k] / bc2;
            if (decoupled_) w[k] -= lr_ * weight_decay_ * w[k];
            w[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
        p->version++;
    }
}

void Adam::save(BlobWriter& w, const std::string& prefix) const {
    for (size_t i = 0; i < params_.size(); ++i) {
        w.add(prefix + ".m." + params_[i]->name, m_[i]);
        w.add(prefix + ".v." + params_[i]->name, v_[i]);
    }
    Tensor step_count({1}, static_cast<double>(t_));
    w.add_owned(prefix + ".t", std::move(step_count));
}

void Adam::load(const std::map<std::string, Tensor>& blob, const std::string& prefix) {
    for (size_t i = 0; i < params_.size(); ++i) {
        const Tensor& m = blob_get(blob, prefix + ".m." + params_[i]->name);
        const Tensor& v = blob_get(blob, prefix + ".v." + params_[i]->name);
        if (!m.same_shape(m_[i]) || !v.same_shape(v_[i]))
            throw std::runtime_error("optimizer state shape mismatch for " + params_[i]->name);
        m_[i] = m;
        v_[i] = v;
    }
    t_ = static_cast<int64_t>(blob_get(blob, prefix + ".t")[0]);
}

} // namespace nn
} // namespace dfkd
