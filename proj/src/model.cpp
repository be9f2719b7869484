#include "skipdet/model.hpp"

#include <cmath>
#include <functional>

namespace skipdet {

int make_divisible8(float v) {
    int n = std::max(8, (int(v) + 4) / 8 * 8);
    if (float(n) < 0.9f * v) n += 8;
    return n;
}

int BackboneConfig::total_layers() const {
    int n = 0;
    for (int c : stage_layers) n += c;
    return n;
}

int BackboneConfig::scaled_channels(int stage) const {
    return make_divisible8(float(base_channels[std::size_t(stage - 1)]) * alpha);
}

int stage_of_layer(int l, const BackboneConfig& cfg) {
    if (l < 1 || l > cfg.total_layers())
        throw std::out_of_range("stage_of_layer: l=" + std::to_string(l) + " out of range 1.." +
                                std::to_string(cfg.total_layers()));
    int cum = 0;
    for (int s = 0; s < 5; ++s) {
        cum += cfg.stage_layers[std::size_t(s)];
        if (l <= cum) return s + 1;
    }
    return 5;
}

std::vector<int> layers_of_stage(int stage, const BackboneConfig& cfg) {
    if (stage < 1 || stage > 5) throw std::out_of_range("stage must be in 1..5");
    int lo = 1;
    for (int s = 1; s < stage; ++s) lo += cfg.stage_layers[std::size_t(s - 1)];
    std::vector<int> out;
    for (int i = 0; i < cfg.stage_layers[std::size_t(stage - 1)]; ++i) out.push_back(lo + i);
    return out;
}

// ---------------------------------------------------------------------------
// InvertedResidual: expand(1x1, ratio t) -> dw 3x3 -> project(1x1),
// residual add when stride 1 and channels match
// ---------------------------------------------------------------------------

InvertedResidual::InvertedResidual(int in_ch, int out_ch, int stride, int expansion, Rng& init)
    : expand(LayerSpec::conv(in_ch, in_ch * expansion, 1, 1, /*bias=*/false), &init),
      dw(LayerSpec::depthwise(in_ch * expansion, 3, stride, /*bias=*/false), &init),
      project(LayerSpec::conv(in_ch * expansion, out_ch, 1, 1, /*bias=*/false), &init),
      bn1(LayerSpec::batchnorm(in_ch * expansion)),
      bn2(LayerSpec::batchnorm(in_ch * expansion)),
      bn3(LayerSpec::batchnorm(out_ch)),
      use_res_(stride == 1 && in_ch == out_ch) {}

Tensor InvertedResidual::forward(const Tensor& x, bool train) {
    Tensor h = act1.forward(bn1.forward(expand.forward(x, train), train), train);
    h = act2.forward(bn2.forward(dw.forward(h, train), train), train);
    h = bn3.forward(project.forward(h, train), train);
    if (use_res_) h = add_forward(h, x);
    return h;
}

Tensor InvertedResidual::backward(const Tensor& gy) {
    Tensor g = project.backward(bn3.backward(gy));
    g = dw.backward(bn2.backward(act2.backward(g)));
    g = expand.backward(bn1.backward(act1.backward(g)));
    if (use_res_) g = add_forward(g, gy);
    return g;
}

void InvertedResidual::collect(const std::string& prefix, std::vector<NamedParam>& params,
                               std::vector<NamedBuffer>& buffers, bool ee) {
    auto conv_of = [&](const std::string& n, Conv2dLayer<float>& c) {
        params.push_back({prefix + "." + n + ".w", &c.weight, ee});
        if (c.spec().bias) params.push_back({prefix + "." + n + ".b", &c.bias, ee});
    };
    auto bn_of = [&](const std::string& n, BatchNormLayer<float>& b) {
        params.push_back({prefix + "." + n + ".gamma", &b.gamma, ee});
        params.push_back({prefix + "." + n + ".beta", &b.beta, ee});
        buffers.push_back({prefix + "." + n + ".rmean", &b.running_mean});
        buffers.push_back({prefix + "." + n + ".rvar", &b.running_var});
    };
    conv_of("expand", expand);
    bn_of("bn1", bn1);
    conv_of("dw", dw);
    bn_of("bn2", bn2);
    conv_of("project", project);
    bn_of("bn3", bn3);
}

// ---------------------------------------------------------------------------
// ModelGraph
// ---------------------------------------------------------------------------

namespace {
inline int half_up(int v) { return (v + 1) / 2; }
}

ModelGraph::ModelGraph(const BackboneConfig& backbone, std::optional<EEBranchConfig> ee,
                       const HeadConfig& heads, std::uint64_t init_seed)
    : bb_(backbone), ee_(ee), hc_(heads) {
    Rng init = Rng(init_seed).fork("init");
    int total = bb_.total_layers();
    if (ee_ && (ee_->attach_layer < 1 || ee_->attach_layer > total))
        throw std::invalid_argument("ee.attach_layer " + std::to_string(ee_->attach_layer) +
                                    " outside 1.." + std::to_string(total));

    int c0 = bb_.stem_channels();
    stem_.conv = std::make_unique<Conv2dLayer<float>>(
        LayerSpec::conv(bb_.in_ch, c0, 3, 1, /*bias=*/false), &init);
    stem_.bn = std::make_unique<BatchNormLayer<float>>(LayerSpec::batchnorm(c0));

    int in_ch = c0;
    for (int l = 1; l <= total; ++l) {
        int stage = stage_of_layer(l, bb_);
        int out_ch = bb_.scaled_channels(stage);
        bool stage_entry = (l == layers_of_stage(stage, bb_).front());
        int stride = stage_entry ? 2 : 1;
        blocks_.emplace_back(in_ch, out_ch, stride, bb_.expansion, init);
        in_ch = out_ch;
    }

    // shape bookkeeping: shape_after_[0] = stem output, [l] = after layer l
    shape_after_.resize(std::size_t(total) + 1);
    shape_after_[0] = {c0, bb_.in_h, bb_.in_w};
    for (int l = 1; l <= total; ++l) {
        auto prev = shape_after_[std::size_t(l - 1)];
        int stage = stage_of_layer(l, bb_);
        bool stage_entry = (l == layers_of_stage(stage, bb_).front());
        int h = stage_entry ? half_up(prev[1]) : prev[1];
        int w = stage_entry ? half_up(prev[2]) : prev[2];
        shape_after_[std::size_t(l)] = {bb_.scaled_channels(stage), h, w};
    }

    if (ee_) {
        int cp = shape_after_[std::size_t(ee_->attach_layer)][0];
        branch_.conv1 = std::make_unique<Conv2dLayer<float>>(
            LayerSpec::conv(cp, cp, 3, 1, /*bias=*/false), &init);
        branch_.bn1 = std::make_unique<BatchNormLayer<float>>(LayerSpec::batchnorm(cp));
        branch_.conv2 = std::make_unique<Conv2dLayer<float>>(
            LayerSpec::conv(cp, ee_->mid_channels, 3, 2, /*bias=*/false), &init);
        branch_.bn2 = std::make_unique<BatchNormLayer<float>>(LayerSpec::batchnorm(ee_->mid_channels));
        branch_.fc1 = std::make_unique<LinearLayer<float>>(
            LayerSpec::linear(ee_->mid_channels, ee_->fc_hidden), &init);
        branch_.fc2 = std::make_unique<LinearLayer<float>>(
            LayerSpec::linear(ee_->fc_hidden, EEBranchConfig::num_classes), &init);
    }

    int l4 = layers_of_stage(4, bb_).back();
    int l5 = layers_of_stage(5, bb_).back();
    int head_idx = 0;
    for (int l : {l4, l5}) {
        int cf = shape_after_[std::size_t(l)][0];
        int a = hc_.anchors_per_cell(head_idx);
        Head h;
        h.attach_layer = l;
        h.cls = std::make_unique<Conv2dLayer<float>>(
            LayerSpec::conv(cf, a * hc_.num_classes, 3), &init);
        h.box = std::make_unique<Conv2dLayer<float>>(LayerSpec::conv(cf, a * 4, 3), &init);
        heads_.push_back(std::move(h));
        ++head_idx;
    }
    build_layer_table();
}

std::array<int, 3> ModelGraph::shape_after_layer(int l) const {
    if (l < 0 || l > bb_.total_layers()) throw std::out_of_range("shape_after_layer");
    return shape_after_[std::size_t(l)];
}

std::array<int, 3> ModelGraph::head_feature_shape(int head) const {
    return shape_after_[std::size_t(heads_[std::size_t(head)].attach_layer)];
}

int ModelGraph::num_anchors() const {
    int total = 0;
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        auto s = head_feature_shape(int(h));
        total += s[1] * s[2] * hc_.anchors_per_cell(int(h));
    }
    return total;
}

void ModelGraph::build_layer_table() {
    layer_table_.clear();
    auto conv_row = [&](const std::string& name, const LayerSpec& sp, int h_in, int w_in, int l) {
        int ho = (h_in + 2 * (sp.kernel / 2) - sp.kernel) / sp.stride + 1;
        int wo = (w_in + 2 * (sp.kernel / 2) - sp.kernel) / sp.stride + 1;
        LayerInfo li;
        li.name = name;
        li.kind = sp.kind;
        li.backbone_layer = l;
        li.macs = (long long)(ho) * wo * sp.out_ch * (sp.in_ch / sp.groups) * sp.kernel * sp.kernel;
        li.params = (long long)(sp.out_ch) * (sp.in_ch / sp.groups) * sp.kernel * sp.kernel +
                    (sp.bias ? sp.out_ch : 0);
        layer_table_.push_back(li);
    };
    auto bn_row = [&](const std::string& name, int ch, long long elems, int l) {
        layer_table_.push_back({name, LayerKind::BatchNorm, l, 0, 2 * elems, 2LL * ch});
    };
    auto ew_row = [&](const std::string& name, LayerKind k, long long elems, int l) {
        layer_table_.push_back({name, k, l, 0, elems, 0});
    };

    int c0 = bb_.stem_channels();
    conv_row("stem.conv", stem_.conv->spec(), bb_.in_h, bb_.in_w, 0);
    long long stem_elems = (long long)c0 * bb_.in_h * bb_.in_w;
    bn_row("stem.bn", c0, stem_elems, 0);
    ew_row("stem.relu6", LayerKind::ReLU6, stem_elems, 0);

    for (int l = 1; l <= bb_.total_layers(); ++l) {
        auto in_s = shape_after_[std::size_t(l - 1)];
        auto out_s = shape_after_[std::size_t(l)];
        auto& blk = blocks_[std::size_t(l - 1)];
        std::string p = "block" + std::to_string(l);
        conv_row(p + ".expand", blk.expand.spec(), in_s[1], in_s[2], l);
        long long mid_in = (long long)blk.expand.spec().out_ch * in_s[1] * in_s[2];
        bn_row(p + ".bn1", blk.expand.spec().out_ch, mid_in, l);
        ew_row(p + ".relu6a", LayerKind::ReLU6, mid_in, l);
        conv_row(p + ".dw", blk.dw.spec(), in_s[1], in_s[2], l);
        long long mid_out = (long long)blk.dw.spec().out_ch * out_s[1] * out_s[2];
        bn_row(p + ".bn2", blk.dw.spec().out_ch, mid_out, l);
        ew_row(p + ".relu6b", LayerKind::ReLU6, mid_out, l);
        conv_row(p + ".project", blk.project.spec(), out_s[1], out_s[2], l);
        long long out_elems = (long long)out_s[0] * out_s[1] * out_s[2];
        bn_row(p + ".bn3", out_s[0], out_elems, l);
        if (blk.use_residual()) ew_row(p + ".add", LayerKind::Add, out_elems, l);
    }

    if (ee_) {
        auto s = shape_after_[std::size_t(ee_->attach_layer)];
        conv_row("ee.conv1", branch_.conv1->spec(), s[1], s[2], -1);
        long long e1 = (long long)s[0] * s[1] * s[2];
        bn_row("ee.bn1", s[0], e1, -1);
        ew_row("ee.relu6a", LayerKind::ReLU6, e1, -1);
        conv_row("ee.conv2", branch_.conv2->spec(), s[1], s[2], -1);
        int h2 = half_up(s[1]), w2 = half_up(s[2]);
        long long e2 = (long long)ee_->mid_channels * h2 * w2;
        bn_row("ee.bn2", ee_->mid_channels, e2, -1);
        ew_row("ee.relu6b", LayerKind::ReLU6, e2, -1);
        ew_row("ee.gap", LayerKind::GlobalAvgPool, e2, -1);
        layer_table_.push_back({"ee.fc1", LayerKind::Linear, -1,
                                (long long)ee_->mid_channels * ee_->fc_hidden, 0,
                                (long long)ee_->mid_channels * ee_->fc_hidden + ee_->fc_hidden});
        ew_row("ee.relu6c", LayerKind::ReLU6, ee_->fc_hidden, -1);
        layer_table_.push_back({"ee.fc2", LayerKind::Linear, -1, (long long)ee_->fc_hidden * 2, 0,
                                (long long)ee_->fc_hidden * 2 + 2});
        ew_row("ee.softmax", LayerKind::Softmax, 2, -1);
    }

    for (std::size_t h = 0; h < heads_.size(); ++h) {
        auto s = head_feature_shape(int(h));
        std::string p = "head" + std::to_string(h);
        conv_row(p + ".cls", heads_[h].cls->spec(), s[1], s[2], -2);
        conv_row(p + ".box", heads_[h].box->spec(), s[1], s[2], -2);
    }
}

Tensor ModelGraph::forward_to_layer(const Tensor& input, int l, bool train, ForwardStats* stats) {
    if (l < 1 || l > bb_.total_layers())
        throw std::out_of_range("forward_to_layer: l=" + std::to_string(l));
    check_shape(input.shape,
                {input.dim(0), bb_.in_ch, bb_.in_h, bb_.in_w}, "model input");
    Tensor x = stem_.act.forward(stem_.bn->forward(stem_.conv->forward(input, train), train), train);
    for (int i = 0; i < l; ++i) {
        x = blocks_[std::size_t(i)].forward(x, train);
        if (stats) stats->blocks_evaluated++;
    }
    return x;
}

Tensor ModelGraph::ee_branch_forward(const Tensor& x_l, bool train) {
    if (!ee_) throw std::logic_error("model has no EE branch");
    Tensor h = branch_.act1.forward(branch_.bn1->forward(branch_.conv1->forward(x_l, train), train),
                                    train);
    h = branch_.act2.forward(branch_.bn2->forward(branch_.conv2->forward(h, train), train), train);
    h = branch_.gap.forward(h, train);
    h = branch_.act3.forward(branch_.fc1->forward(h, train), train);
    return branch_.fc2->forward(h, train);
}

ModelGraph::PrefixCache ModelGraph::forward_prefix(const Tensor& input, int l,
                                                   ForwardStats* stats) {
    if (l < 1 || l > bb_.total_layers())
        throw std::out_of_range("forward_prefix: l=" + std::to_string(l));
    check_shape(input.shape, {input.dim(0), bb_.in_ch, bb_.in_h, bb_.in_w}, "model input");
    PrefixCache cache;
    cache.l = l;
    Tensor x = stem_.act.forward(stem_.bn->forward(stem_.conv->forward(input, false), false), false);
    for (int i = 0; i < l; ++i) {
        x = blocks_[std::size_t(i)].forward(x, false);
        if (stats) stats->blocks_evaluated++;
        for (auto& h : heads_)
            if (h.attach_layer == i + 1) cache.head_acts.emplace_back(i + 1, x);
    }
    cache.x_l = std::move(x);
    return cache;
}

RawOutputs ModelGraph::resume_from(const PrefixCache& cache, ForwardStats* stats) {
    Tensor x = cache.x_l;
    std::vector<std::pair<Tensor, Tensor>> head_raw(heads_.size());
    auto run_heads = [&](int at, const Tensor& act) {
        for (std::size_t h = 0; h < heads_.size(); ++h)
            if (heads_[h].attach_layer == at) {
                head_raw[h].first = heads_[h].cls->forward(act, false);
                head_raw[h].second = heads_[h].box->forward(act, false);
            }
    };
    for (const auto& [at, act] : cache.head_acts) run_heads(at, act);
    for (int i = cache.l; i < bb_.total_layers(); ++i) {
        x = blocks_[std::size_t(i)].forward(x, false);
        if (stats) stats->blocks_evaluated++;
        run_heads(i + 1, x);
    }
    if (stats) stats->full_pipeline_runs++;
    int N = cache.x_l.dim(0);
    RawOutputs out;
    out.cls = flatten_heads(head_raw, 0, N);
    out.box = flatten_heads(head_raw, 1, N);
    return out;
}

Tensor ModelGraph::flatten_heads(const std::vector<std::pair<Tensor, Tensor>>& head_raw, int which,
                                 int N) const {
    int per = which == 0 ? hc_.num_classes : 4;
    int A = num_anchors();
    Tensor out({N, A, per});
    for (int n = 0; n < N; ++n) {
        int base = 0;
        for (std::size_t h = 0; h < heads_.size(); ++h) {
            const Tensor& t = which == 0 ? head_raw[h].first : head_raw[h].second;
            int C = t.dim(1), H = t.dim(2), W = t.dim(3);
            int acell = hc_.anchors_per_cell(int(h));
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    for (int a = 0; a < acell; ++a) {
                        int row = base + (y * W + x) * acell + a;
                        for (int k = 0; k < per; ++k)
                            out.data[(std::size_t(n) * A + row) * per + k] =
                                t.data[((std::size_t(n) * C + a * per + k) * H + y) * W + x];
                    }
            base += H * W * acell;
        }
    }
    return out;
}

RawOutputs ModelGraph::forward_full(const Tensor& input, bool train, ForwardStats* stats) {
    check_shape(input.shape, {input.dim(0), bb_.in_ch, bb_.in_h, bb_.in_w}, "model input");
    int N = input.dim(0);
    Tensor x = stem_.act.forward(stem_.bn->forward(stem_.conv->forward(input, train), train), train);
    std::vector<std::pair<Tensor, Tensor>> head_raw(heads_.size());
    RawOutputs out;
    for (int i = 0; i < bb_.total_layers(); ++i) {
        x = blocks_[std::size_t(i)].forward(x, train);
        if (stats) stats->blocks_evaluated++;
        int l = i + 1;
        if (ee_ && l == ee_->attach_layer) {
            out.ee_logits = ee_branch_forward(x, train);
            if (stats) stats->branch_runs++;
        }
        for (std::size_t h = 0; h < heads_.size(); ++h)
            if (heads_[h].attach_layer == l) {
                head_raw[h].first = heads_[h].cls->forward(x, train);
                head_raw[h].second = heads_[h].box->forward(x, train);
            }
    }
    if (stats) stats->full_pipeline_runs++;
    out.cls = flatten_heads(head_raw, 0, N);
    out.box = flatten_heads(head_raw, 1, N);
    trained_forward_ = train;
    return out;
}

void ModelGraph::backward(const Tensor& cls_grad, const Tensor& box_grad,
                          const Tensor& ee_logits_grad) {
    if (!trained_forward_) throw std::logic_error("backward without a train-mode forward");
    int N = cls_grad.dim(0);
    int A = num_anchors();
    // unflatten per-head conv-layout gradients
    std::vector<Tensor> contrib(std::size_t(bb_.total_layers()) + 1);
    auto add_contrib = [&](int l, Tensor&& g) {
        auto& slot = contrib[std::size_t(l)];
        if (slot.numel() == 0)
            slot = std::move(g);
        else
            slot = add_forward(slot, g);
    };
    for (int which = 0; which < 2; ++which) {
        const Tensor& flat = which == 0 ? cls_grad : box_grad;
        int per = which == 0 ? hc_.num_classes : 4;
        int base = 0;
        for (std::size_t h = 0; h < heads_.size(); ++h) {
            auto s = head_feature_shape(int(h));
            int H = s[1], W = s[2];
            int acell = hc_.anchors_per_cell(int(h));
            Conv2dLayer<float>* conv = which == 0 ? heads_[h].cls.get() : heads_[h].box.get();
            Tensor g({N, acell * per, H, W});
            for (int n = 0; n < N; ++n)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x)
                        for (int a = 0; a < acell; ++a) {
                            int row = base + (y * W + x) * acell + a;
                            for (int k = 0; k < per; ++k)
                                g.data[((std::size_t(n) * (acell * per) + a * per + k) * H + y) * W +
                                       x] = flat.data[(std::size_t(n) * A + row) * per + k];
                        }
            add_contrib(heads_[h].attach_layer, conv->backward(g));
            base += H * W * acell;
        }
    }
    if (ee_ && ee_logits_grad.numel()) {
        Tensor g = branch_.fc2->backward(ee_logits_grad);
        g = branch_.fc1->backward(branch_.act3.backward(g));
        g = branch_.gap.backward(g);
        g = branch_.bn2->backward(branch_.act2.backward(g));
        g = branch_.conv2->backward(g);
        g = branch_.bn1->backward(branch_.act1.backward(g));
        add_contrib(ee_->attach_layer, branch_.conv1->backward(g));
    }
    Tensor g;
    for (int l = bb_.total_layers(); l >= 1; --l) {
        if (contrib[std::size_t(l)].numel()) {
            if (g.numel() == 0)
                g = std::move(contrib[std::size_t(l)]);
            else
                g = add_forward(g, contrib[std::size_t(l)]);
        }
        g = blocks_[std::size_t(l - 1)].backward(g);
    }
    g = stem_.act.backward(g);
    g = stem_.bn->backward(g);
    stem_.conv->backward(g);
    trained_forward_ = false;
}

std::vector<NamedParam> ModelGraph::params() {
    std::vector<NamedParam> p;
    std::vector<NamedBuffer> b;
    p.push_back({"stem.conv.w", &stem_.conv->weight, false});
    p.push_back({"stem.bn.gamma", &stem_.bn->gamma, false});
    p.push_back({"stem.bn.beta", &stem_.bn->beta, false});
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i].collect("block" + std::to_string(i + 1), p, b, false);
    if (ee_) {
        p.push_back({"ee.conv1.w", &branch_.conv1->weight, true});
        p.push_back({"ee.bn1.gamma", &branch_.bn1->gamma, true});
        p.push_back({"ee.bn1.beta", &branch_.bn1->beta, true});
        p.push_back({"ee.conv2.w", &branch_.conv2->weight, true});
        p.push_back({"ee.bn2.gamma", &branch_.bn2->gamma, true});
        p.push_back({"ee.bn2.beta", &branch_.bn2->beta, true});
        p.push_back({"ee.fc1.w", &branch_.fc1->weight, true});
        p.push_back({"ee.fc1.b", &branch_.fc1->bias, true});
        p.push_back({"ee.fc2.w", &branch_.fc2->weight, true});
        p.push_back({"ee.fc2.b", &branch_.fc2->bias, true});
    }
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        std::string pre = "head" + std::to_string(h);
        p.push_back({pre + ".cls.w", &heads_[h].cls->weight, false});
        p.push_back({pre + ".cls.b", &heads_[h].cls->bias, false});
        p.push_back({pre + ".box.w", &heads_[h].box->weight, false});
        p.push_back({pre + ".box.b", &heads_[h].box->bias, false});
    }
    return p;
}

std::vector<NamedBuffer> ModelGraph::buffers() {
    std::vector<NamedParam> p;
    std::vector<NamedBuffer> b;
    b.push_back({"stem.bn.rmean", &stem_.bn->running_mean});
    b.push_back({"stem.bn.rvar", &stem_.bn->running_var});
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i].collect("block" + std::to_string(i + 1), p, b, false);
    if (ee_) {
        b.push_back({"ee.bn1.rmean", &branch_.bn1->running_mean});
        b.push_back({"ee.bn1.rvar", &branch_.bn1->running_var});
        b.push_back({"ee.bn2.rmean", &branch_.bn2->running_mean});
        b.push_back({"ee.bn2.rvar", &branch_.bn2->running_var});
    }
    return b;
}

void ModelGraph::zero_grad() {
    for (auto& p : params()) p.tensor->zero_grad();
}

long long ModelGraph::param_count() {
    long long n = 0;
    for (auto& p : params()) n += (long long)p.tensor->numel();
    return n;
}

void ModelGraph::for_each_weighted_layer(
    const std::function<void(const std::string&, Conv2dLayer<float>*, LinearLayer<float>*)>& fn) {
    fn("stem.conv", stem_.conv.get(), nullptr);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        std::string p = "block" + std::to_string(i + 1);
        fn(p + ".expand", &blocks_[i].expand, nullptr);
        fn(p + ".dw", &blocks_[i].dw, nullptr);
        fn(p + ".project", &blocks_[i].project, nullptr);
    }
    if (ee_) {
        fn("ee.conv1", branch_.conv1.get(), nullptr);
        fn("ee.conv2", branch_.conv2.get(), nullptr);
        fn("ee.fc1", nullptr, branch_.fc1.get());
        fn("ee.fc2", nullptr, branch_.fc2.get());
    }
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        std::string p = "head" + std::to_string(h);
        fn(p + ".cls", heads_[h].cls.get(), nullptr);
        fn(p + ".box", heads_[h].box.get(), nullptr);
    }
}

}  // namespace skipdet
