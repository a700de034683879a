package com.example.shop.util;

import org.apache.commons.text.StringEscapeUtils;

public final class HtmlEscaper {
    private HtmlEscaper() {
    }

    public static String escape(String raw) {
        return StringEscapeUtils.escapeHtml4(raw);
    }
}
