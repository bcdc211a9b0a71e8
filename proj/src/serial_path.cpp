#include "spdp/serial_path.hpp"

#include <algorithm>
#include <cmath>

namespace spdp {

namespace {

// Segment-relative positions: audio frame t sits at base + t, the prompt ends at
// base, and text input j sits at base + 1 + j. The slot that predicts target token i
// therefore shares its position with audio frame i.
constexpr std::size_t kPositionBase = 16;

std::vector<unsigned char> downsample_mask(std::span<const unsigned char> mask, std::size_t batch,
                                           std::size_t length, std::size_t stride) {
    const std::size_t out_len = (length + stride - 1) / stride;
    std::vector<unsigned char> out(batch * out_len);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < out_len; ++t) out[b * out_len + t] = mask[b * length + t * stride];
    return out;
}

Tensor conv(const nn::Linear& layer, const Tensor& x, std::size_t stride) {
    return ops::gelu(layer(ops::unfold_time(x, 3, stride)));
}

}  // namespace

void SerialConfig::validate() const {
    require(feat_dim >= 1 && enc_dim >= 1 && adaptor_dim >= 1 && dec_dim >= 1, "serial: dims must be >= 1", ErrorKind::Usage);
    require(tap_layers.size() == 3, "serial: exactly three tap layers are required", ErrorKind::Usage);
    for (std::size_t i = 0; i < tap_layers.size(); ++i) {
        require(tap_layers[i] >= 1 && tap_layers[i] <= enc_layers, "serial: tap layer outside encoder depth", ErrorKind::Usage);
        require(i == 0 || tap_layers[i] > tap_layers[i - 1], "serial: tap layers must be strictly increasing", ErrorKind::Usage);
    }
    require(conv_downsample >= 1 && adaptor_downsample >= 1, "serial: downsample factors must be >= 1", ErrorKind::Usage);
    require(vocab_size > 4, "serial: vocabulary too small", ErrorKind::Usage);
    require(max_decode_len >= 1, "serial: max_decode_len must be >= 1", ErrorKind::Usage);
    require(dec_layers >= 1 && adaptor_layers >= 1, "serial: need at least one decoder and adaptor layer", ErrorKind::Usage);
}

SerialParams SerialParams::create(ParamStore& store, const SerialConfig& c, const std::string& prefix) {
    c.validate();
    SerialParams p;
    const std::string enc = prefix + ".enc";
    p.enc_conv1 = nn::Linear::create(store, enc + ".conv1", 3 * c.feat_dim, c.enc_dim);
    p.enc_conv2 = nn::Linear::create(store, enc + ".conv2", 3 * c.enc_dim, c.enc_dim);
    for (std::size_t l = 0; l < c.enc_layers; ++l)
        p.enc_layers.push_back(nn::TransformerLayer::create(store, enc + ".layer." + std::to_string(l), c.enc_dim, c.enc_heads, c.ffn_mult));
    p.enc_ln = nn::LayerNorm::create(store, enc + ".ln", c.enc_dim);

    const std::string ada = prefix + ".adaptor";
    p.ada_conv1 = nn::Linear::create(store, ada + ".conv1", 3 * c.enc_dim, c.adaptor_dim);
    p.ada_conv2 = nn::Linear::create(store, ada + ".conv2", 3 * c.adaptor_dim, c.adaptor_dim);
    p.ada_conv3 = nn::Linear::create(store, ada + ".conv3", 3 * c.adaptor_dim, c.adaptor_dim);
    for (std::size_t l = 0; l < c.adaptor_layers; ++l)
        p.ada_layers.push_back(nn::TransformerLayer::create(store, ada + ".layer." + std::to_string(l), c.adaptor_dim, c.enc_heads, c.ffn_mult));
    p.ada_ln = nn::LayerNorm::create(store, ada + ".ln", c.adaptor_dim);
    p.ada_out = nn::Linear::create(store, ada + ".out", c.adaptor_dim, c.dec_dim);

    const std::string dec = prefix + ".dec";
    p.embedding = store.uniform(dec + ".embedding", {c.vocab_size, c.dec_dim}, c.dec_dim);
    for (std::size_t l = 0; l < c.dec_layers; ++l)
        p.dec_layers.push_back(nn::TransformerLayer::create(store, dec + ".layer." + std::to_string(l), c.dec_dim, c.dec_heads, c.ffn_mult));
    p.dec_ln = nn::LayerNorm::create(store, dec + ".ln", c.dec_dim);
    p.lm_head = nn::Linear::create(store, dec + ".lm_head", c.dec_dim, c.vocab_size);
    return p;
}

SerialPath::SerialPath(ParamStore& store, SerialConfig config, const std::string& prefix)
    : config_(std::move(config)), params_(SerialParams::create(store, config_, prefix)) {}

Encoded SerialPath::encode(const Tensor& frames, std::span<const unsigned char> frame_mask) const {
    require(frames.rank() == 3 && frames.dim(2) == config_.feat_dim,
            "encode: frames must be [B,T0," + std::to_string(config_.feat_dim) + "], got " + shape_str(frames.shape()));
    const std::size_t B = frames.dim(0), T0 = frames.dim(1);
    require(T0 >= 1, "encode: T0 == 0");
    require(frame_mask.size() == B * T0, "encode: frame mask size mismatch");
    for (std::size_t b = 0; b < B; ++b) require(frame_mask[b * T0] != 0, "encode: batch item has no valid frames");

    Encoded out;
    out.mask = downsample_mask(frame_mask, B, T0, config_.conv_downsample);
    Tensor x = ops::mask_rows(frames, frame_mask);
    x = ops::mask_rows(conv(params_.enc_conv1, x, 1), frame_mask);
    x = conv(params_.enc_conv2, x, config_.conv_downsample);
    x = ops::mask_rows(nn::add_positions(ops::scale(x, std::sqrt(static_cast<double>(config_.enc_dim)))), out.mask);
    const std::size_t T1 = x.dim(1);
    const auto attn = nn::AttentionMask::from_valid(out.mask, B, T1);
    std::vector<Tensor> taps;
    for (std::size_t l = 0; l < params_.enc_layers.size(); ++l) {
        x = params_.enc_layers[l](x, attn);
        if (std::find(config_.tap_layers.begin(), config_.tap_layers.end(), l + 1) != config_.tap_layers.end())
            taps.push_back(x);
    }
    out.enc_last = params_.enc_ln(x);
    out.emb_a = ops::mask_rows(ops::concat(taps, -1), out.mask);
    return out;
}

Adapted SerialPath::adapt(const Tensor& enc_last, std::span<const unsigned char> mask) const {
    const std::size_t B = enc_last.dim(0), T1 = enc_last.dim(1);
    require(mask.size() == B * T1, "adapt: mask size mismatch");
    Adapted out;
    Tensor x = ops::mask_rows(enc_last, mask);
    x = ops::mask_rows(conv(params_.ada_conv1, x, 1), mask);
    x = ops::mask_rows(conv(params_.ada_conv2, x, 1), mask);
    x = conv(params_.ada_conv3, x, config_.adaptor_downsample);
    out.mask = downsample_mask(mask, B, T1, config_.adaptor_downsample);
    x = ops::mask_rows(nn::add_positions(ops::scale(x, std::sqrt(static_cast<double>(config_.adaptor_dim)))), out.mask);
    const auto attn = nn::AttentionMask::from_valid(out.mask, B, x.dim(1));
    for (const auto& layer : params_.ada_layers) x = layer(x, attn);
    out.prefix = ops::mask_rows(params_.ada_out(params_.ada_ln(x)), out.mask);
    return out;
}

Tensor SerialPath::decoder_hidden(const Adapted& audio, const std::vector<std::vector<long>>& prompts,
                                  const std::vector<std::vector<long>>& inputs, DecoderLayout& layout) const {
    const std::size_t B = audio.prefix.dim(0), T2 = audio.prefix.dim(1), D = config_.dec_dim;
    require(audio.prefix.dim(2) == D, "decoder: audio prefix width must equal dec_dim");
    require(prompts.size() == B && inputs.size() == B, "decoder: batch size mismatch");
    layout = DecoderLayout{};
    layout.batch = B;
    layout.audio = T2;
    for (std::size_t b = 0; b < B; ++b) {
        require(!prompts[b].empty(), "decoder: prompt must hold at least one token");
        layout.prompt_len.push_back(prompts[b].size());
        layout.text_len.push_back(inputs[b].size());
        layout.prompt = std::max(layout.prompt, prompts[b].size());
        layout.text = std::max(layout.text, inputs[b].size());
    }
    const std::size_t tok_len = layout.prompt + layout.text;
    const std::size_t L = layout.length();

    std::vector<long> ids(B * tok_len, -1);
    std::vector<unsigned char> valid(B * L, 0);
    std::vector<std::size_t> pos(B * L, 0);
    std::vector<std::size_t> text_order(B * L, 0);
    for (std::size_t b = 0; b < B; ++b) {
        require(prompts[b].size() <= kPositionBase, "decoder: prompt longer than the position base");
        for (std::size_t t = 0; t < T2; ++t) {
            valid[b * L + t] = audio.mask[b * T2 + t];
            pos[b * L + t] = kPositionBase + t;
        }
        for (std::size_t j = 0; j < prompts[b].size(); ++j) {
            require(prompts[b][j] >= 0 && static_cast<std::size_t>(prompts[b][j]) < config_.vocab_size, "decoder: prompt token out of range");
            ids[b * tok_len + j] = prompts[b][j];
            valid[b * L + T2 + j] = 1;
            pos[b * L + T2 + j] = kPositionBase + 1 + j - prompts[b].size();
            text_order[b * L + T2 + j] = j;
        }
        for (std::size_t j = 0; j < inputs[b].size(); ++j) {
            require(inputs[b][j] >= 0 && static_cast<std::size_t>(inputs[b][j]) < config_.vocab_size, "decoder: input token out of range");
            const std::size_t slot = T2 + layout.prompt + j;
            ids[b * tok_len + layout.prompt + j] = inputs[b][j];
            valid[b * L + slot] = 1;
            pos[b * L + slot] = kPositionBase + 1 + j;
            text_order[b * L + slot] = prompts[b].size() + j;
        }
    }

    // Embeddings scaled by sqrt(D) so token identity is not swamped by the unit-amplitude positions.
    Tensor x = ops::scale(ops::reshape(ops::gather_rows(params_.embedding, ids), {B, tok_len, D}), std::sqrt(static_cast<double>(D)));
    x = ops::concat({audio.prefix, x}, 1);
    x = ops::add(x, Tensor::from({B, L, D}, nn::sinusoidal(pos, D)));

    // Audio attends to valid audio; text sees all valid audio plus earlier-or-equal text.
    nn::AttentionMask attn;
    attn.batch = B;
    attn.queries = attn.keys = L;
    attn.keep.assign(B * L * L, 0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < L; ++i) {
            const bool qi_valid = valid[b * L + i];
            const bool qi_audio = i < T2;
            for (std::size_t j = 0; j < L; ++j) {
                if (!valid[b * L + j]) continue;
                bool keep;
                if (!qi_valid) keep = true;
                else if (qi_audio) keep = j < T2;
                else keep = j < T2 || text_order[b * L + j] <= text_order[b * L + i];
                attn.keep[(b * L + i) * L + j] = keep ? 1 : 0;
            }
        }
    for (const auto& layer : params_.dec_layers) x = layer(x, attn);
    return params_.dec_ln(x);
}

std::size_t SerialPath::check_target(std::span<const long> target) {
    std::size_t open = target.size();
    std::size_t opens = 0;
    for (std::size_t i = 0; i < target.size(); ++i)
        if (target[i] == Vocab::kStyleOpen) {
            ++opens;
            open = std::min(open, i);
        }
    require(opens == 1, "target must contain exactly one STYLE_OPEN, found " + std::to_string(opens));
    require(open >= 1, "target has an empty transcript before STYLE_OPEN");
    require(target.size() >= open + 4, "target too short after STYLE_OPEN");
    require(target.back() == Vocab::kEos && target[target.size() - 2] == Vocab::kStyleClose,
            "target must end with STYLE_CLOSE, EOS");
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (i == open || i + 2 == target.size() || i + 1 == target.size()) continue;
        require(target[i] != Vocab::kPad && target[i] != Vocab::kEos && target[i] != Vocab::kStyleClose,
                "reserved token inside target at position " + std::to_string(i));
    }
    return open;
}

TeacherForced SerialPath::teacher_forced_loss(const Adapted& audio, const std::vector<std::vector<long>>& prompts,
                                              const std::vector<std::vector<long>>& targets) const {
    const std::size_t B = targets.size();
    std::vector<std::vector<long>> inputs(B);
    std::vector<std::size_t> transcript_len(B);
    std::size_t max_target = 0, max_s = 0;
    for (std::size_t b = 0; b < B; ++b) {
        transcript_len[b] = check_target(targets[b]);
        inputs[b].assign(targets[b].begin(), targets[b].end() - 1);
        max_target = std::max(max_target, targets[b].size());
        max_s = std::max(max_s, transcript_len[b]);
    }
    DecoderLayout layout;
    const Tensor hidden = decoder_hidden(audio, prompts, inputs, layout);
    const std::size_t D = config_.dec_dim;
    const Tensor rows = ops::reshape(hidden, {layout.batch * layout.length(), D});

    // Position predicting target[t]: last prompt slot for t = 0, else text slot t-1.
    std::vector<long> pred_rows(B * max_target, -1);
    std::vector<long> labels(B * max_target, Vocab::kPad);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < targets[b].size(); ++t) {
            const std::size_t slot = t == 0 ? layout.prompt_slot(b, prompts[b].size() - 1) : layout.text_slot(b, t - 1);
            pred_rows[b * max_target + t] = static_cast<long>(slot);
            labels[b * max_target + t] = targets[b][t];
        }
    TeacherForced out;
    const Tensor logits = params_.lm_head(ops::gather_rows(rows, pred_rows));
    out.loss = ops::cross_entropy(logits, labels, Vocab::kPad);

    std::vector<long> emb_rows(B * max_s, -1);
    out.text_mask.assign(B * max_s, 0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < transcript_len[b]; ++j) {
            emb_rows[b * max_s + j] = static_cast<long>(layout.text_slot(b, j));
            out.text_mask[b * max_s + j] = 1;
        }
    out.emb_t = ops::reshape(ops::gather_rows(rows, emb_rows), {B, max_s, D});
    return out;
}

Generation SerialPath::generate_greedy(const Adapted& audio, const std::vector<long>& prompt) const {
    require(audio.prefix.dim(0) == 1, "generate_greedy: batch of one expected");
    const std::size_t D = config_.dec_dim, V = config_.vocab_size;
    Generation gen;
    const std::vector<std::vector<long>> prompts{prompt};

    auto step_logits = [&](const std::vector<long>& inputs) {
        DecoderLayout layout;
        const Tensor hidden = decoder_hidden(audio, prompts, {inputs}, layout);
        const std::size_t slot = inputs.empty() ? layout.prompt_slot(0, prompt.size() - 1) : layout.text_slot(0, inputs.size() - 1);
        const Tensor row = ops::slice(ops::reshape(hidden, {layout.length(), D}), 0, slot, 1);
        const Tensor logits = params_.lm_head(row);
        return std::vector<double>(logits.data().begin(), logits.data().end());
    };
    auto capture = [&](const std::vector<double>& logits) {
        const Tensor p = ops::softmax(Tensor::from({V}, logits), 0);
        gen.next_token_probs = std::vector<double>(p.data().begin(), p.data().end());
    };

    bool after_open = false;
    bool transcript_done = false;
    while (gen.tokens.size() < config_.max_decode_len) {
        const auto logits = step_logits(gen.tokens);
        if (after_open && !gen.next_token_probs) capture(logits);
        after_open = false;
        const long next = static_cast<long>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        gen.tokens.push_back(next);
        if (next == Vocab::kStyleOpen) {
            ++gen.style_open_count;
            after_open = true;
            transcript_done = true;
        }
        if (next == Vocab::kEos) break;
        if (!transcript_done) gen.transcript.push_back(next);
    }
    // STYLE_OPEN as the very last permitted token: its successor distribution is still needed.
    if (after_open && !gen.next_token_probs) capture(step_logits(gen.tokens));

    if (!gen.transcript.empty()) {
        DecoderLayout layout;
        const Tensor hidden = decoder_hidden(audio, prompts, {gen.transcript}, layout);
        gen.emb_t = ops::reshape(ops::slice(ops::reshape(hidden, {layout.length(), D}), 0, layout.text_slot(0, 0), gen.transcript.size()),
                                 {1, gen.transcript.size(), D});
    }
    return gen;
}

}  // namespace spdp
