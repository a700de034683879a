package com.example.shop.web;

import java.nio.file.Files;
import java.nio.file.Path;
import java.nio.file.Paths;
import org.springframework.web.multipart.MultipartFile;

public class UploadController {
    private final Path uploadDir = Paths.get("/var/shop/uploads");

    public String upload(MultipartFile file) throws Exception {
        String filename = file.getOriginalFilename();
        Path target = uploadDir.resolve(filename);
        byte[] data = file.getBytes();
        Files.write(target, data);
        return "stored";
    }

    public String archive(String label) throws Exception {
        Path marker = uploadDir.resolve("ARCHIVED");
        Files.write(marker, label.getBytes());
        return marker.toString();
    }
}
