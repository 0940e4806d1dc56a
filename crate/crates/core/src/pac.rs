//! Proxy auto-config script generation.

/// Most proxies listed in a generated script.
pub const MAX_PAC_PROXIES: usize = 3;

/// The `PROXY a:p; PROXY b:p; DIRECT` fallback chain for the first three
/// `(host, port)` pairs.
pub fn proxy_chain<'a>(proxies: impl IntoIterator<Item = (&'a str, u16)>) -> String {
    let mut chain = String::new();
    for (host, port) in proxies.into_iter().take(MAX_PAC_PROXIES) {
        chain.push_str(&format!("PROXY {host}:{port}; "));
    }
    chain.push_str("DIRECT");
    chain
}

/// A complete PAC script returning [`proxy_chain`] for every URL.
pub fn pac_script<'a>(proxies: impl IntoIterator<Item = (&'a str, u16)>) -> String {
    format!(
        "function FindProxyForURL(url, host) {{ return \"{}\"; }}",
        proxy_chain(proxies)
    )
}
