#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spdp/nn.hpp"
#include "spdp/vocab.hpp"

namespace spdp {

struct SerialConfig {
    std::size_t feat_dim = 16;
    std::size_t enc_dim = 32;
    std::size_t enc_layers = 4;
    std::vector<std::size_t> tap_layers = {1, 2, 3};  // 1-based layer outputs exported to the ALSM
    std::size_t conv_downsample = 2;
    std::size_t enc_heads = 4;
    std::size_t adaptor_dim = 32;
    std::size_t adaptor_layers = 4;
    std::size_t adaptor_downsample = 1;
    std::size_t dec_dim = 64;
    std::size_t dec_layers = 2;
    std::size_t dec_heads = 4;
    std::size_t ffn_mult = 4;
    std::size_t vocab_size = 0;
    std::size_t max_decode_len = 32;

    std::size_t emb_a_dim() const { return tap_layers.size() * enc_dim; }
    void validate() const;
};

struct SerialParams {
    nn::Linear enc_conv1, enc_conv2;
    std::vector<nn::TransformerLayer> enc_layers;
    nn::LayerNorm enc_ln;
    nn::Linear ada_conv1, ada_conv2, ada_conv3;
    std::vector<nn::TransformerLayer> ada_layers;
    nn::LayerNorm ada_ln;
    nn::Linear ada_out;
    Tensor embedding;  // [V, dec_dim]
    std::vector<nn::TransformerLayer> dec_layers;
    nn::LayerNorm dec_ln;
    nn::Linear lm_head;

    static SerialParams create(ParamStore& store, const SerialConfig& config, const std::string& prefix = "serial");
};

struct Encoded {
    Tensor enc_last;                  // [B, T1, enc_dim]
    Tensor emb_a;                     // [B, T1, 3*enc_dim]
    std::vector<unsigned char> mask;  // [B, T1]
};

struct Adapted {
    Tensor prefix;                    // [B, T2, dec_dim]
    std::vector<unsigned char> mask;  // [B, T2]
};

struct TeacherForced {
    Tensor loss;                           // mean token cross-entropy over target positions
    Tensor emb_t;                          // [B, S, dec_dim], last-layer states over transcript tokens
    std::vector<unsigned char> text_mask;  // [B, S]
};

struct Generation {
    std::vector<long> tokens;              // greedy output, EOS included when emitted
    std::vector<long> transcript;          // tokens before the first STYLE_OPEN (or before EOS)
    std::optional<std::vector<double>> next_token_probs;  // P_nt, captured right after STYLE_OPEN
    Tensor emb_t;                          // [1, S, dec_dim]; undefined when transcript is empty
    std::size_t style_open_count = 0;
    bool no_termination() const { return !next_token_probs.has_value(); }
};

// Positions of one decoder batch laid out as padded blocks
// [audio (T2) | prompt (Pmax) | text input (Imax)].
struct DecoderLayout {
    std::size_t batch = 0, audio = 0, prompt = 0, text = 0;
    std::vector<std::size_t> prompt_len, text_len;
    std::size_t length() const { return audio + prompt + text; }
    std::size_t prompt_slot(std::size_t b, std::size_t j) const { return (b * length()) + audio + j; }
    std::size_t text_slot(std::size_t b, std::size_t j) const { return (b * length()) + audio + prompt + j; }
};

// Encoder -> adaptor -> autoregressive decoder (ASR+STYLE target format).
class SerialPath {
 public:
    SerialPath(ParamStore& store, SerialConfig config, const std::string& prefix = "serial");

    const SerialConfig& config() const { return config_; }
    const SerialParams& params() const { return params_; }

    Encoded encode(const Tensor& frames, std::span<const unsigned char> frame_mask) const;
    Adapted adapt(const Tensor& enc_last, std::span<const unsigned char> mask) const;

    // Final-norm hidden states [B, L, dec_dim] for the given prompts and text inputs.
    Tensor decoder_hidden(const Adapted& audio, const std::vector<std::vector<long>>& prompts,
                          const std::vector<std::vector<long>>& inputs, DecoderLayout& layout) const;

    // Targets are transcript ++ ["<"] ++ style tokens ++ [">"] ++ [EOS].
    TeacherForced teacher_forced_loss(const Adapted& audio, const std::vector<std::vector<long>>& prompts,
                                      const std::vector<std::vector<long>>& targets) const;

    // Batch of one. Greedy until EOS or max_decode_len tokens.
    Generation generate_greedy(const Adapted& audio, const std::vector<long>& prompt) const;

    // Index of the single STYLE_OPEN in a well-formed target; throws otherwise.
    static std::size_t check_target(std::span<const long> target);

 private:
    SerialConfig config_;
    SerialParams params_;
};

}  // namespace spdp
