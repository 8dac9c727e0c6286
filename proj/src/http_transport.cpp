#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <condition_variable>
#include <map>

#include "triage/backend.hpp"

namespace triage::backend {

namespace {

class HttplibTransport final : public HttpTransport {
public:
    explicit HttplibTransport(std::size_t pool_size) : capacity_(pool_size) {}

    HttpResponse post(const HttpRequest& request) override {
        const auto [host, path] = split_url(request.url);
        Lease lease(*this, host);
        auto& client = lease.client();
        client.set_connection_timeout(request.timeout);
        client.set_read_timeout(request.timeout);
        client.set_write_timeout(request.timeout);

        httplib::Headers headers;
        std::string content_type = "application/json";
        for (const auto& [k, v] : request.headers) {
            if (k == "Content-Type") {
                content_type = v;
            } else {
                headers.emplace(k, v);
            }
        }
        const auto started = std::chrono::steady_clock::now();
        auto res = client.Post(path, headers, request.body, content_type);
        HttpResponse out;
        if (res) {
            out.status = res->status;
            out.body = res->body;
            return out;
        }
        lease.discard();
        const auto elapsed = std::chrono::steady_clock::now() - started;
        const auto err = res.error();
        out.error = httplib::to_string(err);
        const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                               (err == httplib::Error::Read && elapsed >= request.timeout);
        out.outcome = timed_out ? HttpResponse::Outcome::Timeout : HttpResponse::Outcome::TransportError;
        return out;
    }

    bool reachable(const std::string& url, std::chrono::milliseconds timeout) override {
        const auto [host, path] = split_url(url);
        httplib::Client client(host);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        return static_cast<bool>(client.Get(path));
    }

private:
    // Borrowed client; returned to the idle list unless discarded.
    class Lease {
    public:
        Lease(HttplibTransport& owner, const std::string& host) : owner_(owner), host_(host) {
            std::unique_lock lock(owner_.mu_);
            owner_.cv_.wait(lock, [&] { return owner_.in_use_ < owner_.capacity_; });
            ++owner_.in_use_;
            auto& idle = owner_.idle_[host_];
            if (!idle.empty()) {
                client_ = std::move(idle.back());
                idle.pop_back();
            }
            lock.unlock();
            if (!client_) {
                client_ = std::make_unique<httplib::Client>(host_);
                client_->set_keep_alive(true);
            }
        }
        ~Lease() {
            std::lock_guard lock(owner_.mu_);
            if (client_ && !discard_) owner_.idle_[host_].push_back(std::move(client_));
            --owner_.in_use_;
            owner_.cv_.notify_one();
        }
        Lease(const Lease&) = delete;
        Lease& operator=(const Lease&) = delete;

        httplib::Client& client() { return *client_; }
        void discard() { discard_ = true; }

    private:
        HttplibTransport& owner_;
        std::string host_;
        std::unique_ptr<httplib::Client> client_;
        bool discard_ = false;
    };

    std::size_t capacity_;
    std::size_t in_use_ = 0;
    std::mutex mu_;
    std::condition_variable cv_;
    std::map<std::string, std::vector<std::unique_ptr<httplib::Client>>> idle_;
};

}  // namespace

std::shared_ptr<HttpTransport> make_http_transport(std::size_t pool_size) {
    return std::make_shared<HttplibTransport>(pool_size);
}

}  // namespace triage::backend
