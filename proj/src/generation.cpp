#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "lpr/rewrite.hpp"

namespace lpr {

using json = nlohmann::json;

ChatCompletionsClient::ChatCompletionsClient(EndpointConfig config, Logger logger)
    : config_(std::move(config)), logger_(std::move(logger)) {
    const auto scheme_end = config_.base_url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("endpoint base_url must include a scheme: '" + config_.base_url + "'");
    }
    const auto path_start = config_.base_url.find('/', scheme_end + 3);
    scheme_host_port_ = config_.base_url.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    if (config_.retry.max_attempts < 1) throw ConfigError("retry max_attempts must be >= 1");
}

std::string ChatCompletionsClient::request_body(const std::string& prompt, const DecodingParams& params) const {
    json body = {
        {"model", config_.model},
        {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
        {"temperature", params.temperature},
        {"top_p", params.top_p},
        {"max_tokens", params.max_tokens},
    };
    return body.dump();
}

GenerationResult ChatCompletionsClient::generate(const std::string& prompt, const DecodingParams& params) {
    params.validate();
    const std::string body = request_body(prompt, params);
    const std::string path = path_prefix_ + "/chat/completions";

    httplib::Headers headers;
    if (!config_.api_key_env.empty()) {
        if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
    }

    const auto started = std::chrono::steady_clock::now();
    auto log = [&](const std::string& msg) {
        if (logger_) logger_(msg);
    };

    int last_status = 0;
    std::string last_error;
    GenerationFailure last_kind = GenerationFailure::transport;
    const int max_attempts = config_.retry.max_attempts;
    int attempts_made = 0;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        attempts_made = attempt;
        if (auto wait = config_.retry.backoff_before(attempt); wait.count() > 0) std::this_thread::sleep_for(wait);

        httplib::Client client(scheme_host_port_);
        client.set_connection_timeout(config_.timeout);
        client.set_read_timeout(config_.timeout);
        client.set_write_timeout(config_.timeout);
        auto res = client.Post(path, headers, body, "application/json");

        if (!res) {
            last_kind = GenerationFailure::transport;
            last_status = 0;
            last_error = httplib::to_string(res.error());
            log("attempt " + std::to_string(attempt) + ": transport error: " + last_error);
            continue;
        }
        last_status = res->status;
        if (res->status < 200 || res->status >= 300) {
            last_kind = GenerationFailure::http_status;
            last_error = "HTTP " + std::to_string(res->status);
            log("attempt " + std::to_string(attempt) + ": " + last_error);
            if (!is_transient_status(res->status)) break;
            continue;
        }
        log("attempt " + std::to_string(attempt) + ": HTTP " + std::to_string(res->status));

        std::string content;
        try {
            const auto reply = json::parse(res->body);
            const auto& message = reply.at("choices").at(0).at("message");
            const auto& value = message.at("content");
            if (!value.is_null()) content = value.get<std::string>();
        } catch (const json::exception& e) {
            throw GenerationError(GenerationFailure::malformed_response,
                                  std::string("generation: malformed response: ") + e.what(), res->status, attempt);
        }
        if (content.find_first_not_of(" \t\r\n") == std::string::npos) {
            throw GenerationError(GenerationFailure::empty_completion, "generation: empty completion", res->status,
                                  attempt);
        }
        GenerationResult result;
        result.text = std::move(content);
        result.attempts = attempt;
        result.latency_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        return result;
    }
    throw GenerationError(last_kind,
                          "generation failed after " + std::to_string(attempts_made) + " attempt(s): " + last_error,
                          last_status, attempts_made);
}

}  // namespace lpr
