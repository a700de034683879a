package com.example.shop.service;

import java.math.BigDecimal;
import java.time.Instant;
import java.util.ArrayList;
import java.util.List;
import java.util.UUID;

public class OrderService {
    private final List<String> orders = new ArrayList<>();

    public String placeOrder(String item, int quantity) {
        String id = UUID.randomUUID().toString();
        BigDecimal total = new BigDecimal(quantity).multiply(BigDecimal.TEN);
        orders.add(id + ":" + item + ":" + total.toPlainString());
        return id;
    }

    public Instant timestamp() {
        return Instant.now();
    }

    public String normalize(String raw) {
        return raw.trim().toLowerCase();
    }
}
